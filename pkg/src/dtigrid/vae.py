"""Encoder, spatial broadcast decoder, and the total-correlation-decomposed
VAE loss.

The KL term is estimated with minibatch-weighted sampling: for a batch of M
samples from a dataset of size N,

    log q(z_i)   ~ logsumexp_j log q(z_i | x_j) - log(N M)
    log q(z_i,d) ~ logsumexp_j log q(z_i,d | x_j) - log(N M)

and the loss decomposes into mutual information, total correlation and
dimension-wise KL terms whose sum telescopes exactly to the single-sample KL
estimate mean_i[log q(z_i|x_i) - log p(z_i)].
"""

from dataclasses import dataclass

import numpy as np

from .diffcore.layers import Conv2d, Dense, Relu, Sigmoid, check_finite
from .errors import InvalidInputError, NumericError, ShapeError
from .grid_embed import GRID_SIZE

LATENT_DIM = 32
LOGVAR_CLAMP = 8.0
_LOG2PI = np.log(2.0 * np.pi)


@dataclass
class TcvaeLossBreakdown:
    recon: float
    mi: float
    tc: float
    dim_kl: float
    beta: float

    @property
    def total(self):
        return self.recon + self.mi + self.beta * self.tc + self.dim_kl


def validate_fa_image(pixels):
    x = np.asarray(pixels, dtype=np.float64)
    if x.shape != (GRID_SIZE, GRID_SIZE):
        raise ShapeError(f"FA image must be {GRID_SIZE}x{GRID_SIZE}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("FA image has non-finite pixels")
    if x.min() < 0.0 or x.max() > 1.0:
        raise InvalidInputError("FA values must lie in [0, 1]")
    return x


class Encoder:
    """9x9 image -> (mu, logvar), both of LATENT_DIM."""

    def __init__(self, rng, latent_dim=LATENT_DIM):
        g = GRID_SIZE
        self.conv1 = Conv2d(1, 16, 3, rng, "enc.conv1", init="he")
        self.conv2 = Conv2d(16, 32, 3, rng, "enc.conv2", init="he")
        self.relu1 = Relu()
        self.relu2 = Relu()
        self.flat_dim = 32 * g * g
        self.dense = Dense(self.flat_dim, 128, rng, "enc.dense", init="he")
        self.relu3 = Relu()
        self.mu_head = Dense(128, latent_dim, rng, "enc.mu", init="glorot")
        self.lv_head = Dense(128, latent_dim, rng, "enc.lv", init="glorot")
        # start with small posterior variance: at sigma ~ 1 the decoder sees
        # mostly noise, the encoder loses input sensitivity, and training can
        # fall into posterior collapse it never escapes
        self.lv_head.b[...] = -4.0

    def encode(self, x):
        """x: (B, 9, 9) -> mu, logvar (clamped), cache."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        b = x.shape[0]
        h0 = x[:, None, :, :]
        a1, c1 = self.conv1.forward(h0)
        check_finite(a1, "encoder conv1")
        r1, m1 = self.relu1.forward(a1)
        a2, c2 = self.conv2.forward(r1)
        check_finite(a2, "encoder conv2")
        r2, m2 = self.relu2.forward(a2)
        flat = r2.reshape(b, self.flat_dim)
        a3, c3 = self.dense.forward(flat)
        check_finite(a3, "encoder dense")
        r3, m3 = self.relu3.forward(a3)
        mu, cmu = self.mu_head.forward(r3)
        lv_raw, clv = self.lv_head.forward(r3)
        check_finite(mu, "encoder mu head")
        check_finite(lv_raw, "encoder logvar head")
        lv = np.clip(lv_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
        clamp_mask = (lv_raw > -LOGVAR_CLAMP) & (lv_raw < LOGVAR_CLAMP)
        cache = (c1, m1, c2, m2, c3, m3, cmu, clv, clamp_mask, r2.shape)
        return mu, lv, cache

    def backward(self, cache, dmu, dlv):
        c1, m1, c2, m2, c3, m3, cmu, clv, clamp_mask, r2_shape = cache
        g3 = self.mu_head.backward(cmu, dmu)
        g3 += self.lv_head.backward(clv, dlv * clamp_mask)
        ga3 = self.relu3.backward(m3, g3)
        gflat = self.dense.backward(c3, ga3)
        gr2 = gflat.reshape(r2_shape)
        ga2 = self.relu2.backward(m2, gr2)
        gr1 = self.conv2.backward(c2, ga2)
        ga1 = self.relu1.backward(m1, gr1)
        self.conv1.backward(c1, ga1)

    def param_items(self):
        items = []
        for layer in (self.conv1, self.conv2, self.dense, self.mu_head, self.lv_head):
            items.extend(layer.param_items())
        return items


class Decoder:
    """Spatial broadcast decoder: z tiled over the grid + coordinate channels."""

    def __init__(self, rng, latent_dim=LATENT_DIM):
        g = GRID_SIZE
        self.latent_dim = latent_dim
        coords = np.linspace(-1.0, 1.0, g)
        self.coord_x = np.tile(coords[None, :], (g, 1))  # varies along columns
        self.coord_y = np.tile(coords[:, None], (1, g))  # varies along rows
        self.conv1 = Conv2d(latent_dim + 2, 32, 3, rng, "dec.conv1", init="he")
        self.conv2 = Conv2d(32, 16, 3, rng, "dec.conv2", init="he")
        self.conv3 = Conv2d(16, 1, 1, rng, "dec.conv3", init="glorot")
        self.relu1 = Relu()
        self.relu2 = Relu()
        self.sig = Sigmoid()

    def decode(self, z):
        """z: (B, latent_dim) -> images (B, 9, 9) in [0, 1], plus cache."""
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = z[None]
        if z.shape[1] != self.latent_dim:
            raise ShapeError(f"latent dim {z.shape[1]} != {self.latent_dim}")
        b = z.shape[0]
        g = GRID_SIZE
        tiles = np.broadcast_to(z[:, :, None, None], (b, self.latent_dim, g, g))
        coords = np.broadcast_to(
            np.stack([self.coord_x, self.coord_y])[None], (b, 2, g, g)
        )
        h0 = np.ascontiguousarray(np.concatenate([tiles, coords], axis=1))
        a1, c1 = self.conv1.forward(h0)
        check_finite(a1, "decoder conv1")
        r1, m1 = self.relu1.forward(a1)
        a2, c2 = self.conv2.forward(r1)
        check_finite(a2, "decoder conv2")
        r2, m2 = self.relu2.forward(a2)
        a3, c3 = self.conv3.forward(r2)
        check_finite(a3, "decoder conv3")
        y, sy = self.sig.forward(a3)
        cache = (c1, m1, c2, m2, c3, sy)
        return y[:, 0, :, :], cache

    def backward(self, cache, gy):
        """gy: (B, 9, 9) -> gradient w.r.t. z, (B, latent_dim)."""
        c1, m1, c2, m2, c3, sy = cache
        ga3 = self.sig.backward(sy, gy[:, None, :, :])
        gr2 = self.conv3.backward(c3, ga3)
        ga2 = self.relu2.backward(m2, gr2)
        gr1 = self.conv2.backward(c2, ga2)
        ga1 = self.relu1.backward(m1, gr1)
        gh0 = self.conv1.backward(c1, ga1)
        # broadcast tiling: latent gradient sums over the grid; coord channels stop
        return gh0[:, : self.latent_dim].sum(axis=(2, 3))

    def param_items(self):
        items = []
        for layer in (self.conv1, self.conv2, self.conv3):
            items.extend(layer.param_items())
        return items


class TcvaeModel:
    """Encoder + decoder + auxiliary classification head on mu."""

    def __init__(self, seed=0, latent_dim=LATENT_DIM):
        rng = np.random.default_rng(seed)
        self.latent_dim = latent_dim
        self.encoder = Encoder(rng, latent_dim)
        self.decoder = Decoder(rng, latent_dim)
        self.aux_head = Dense(latent_dim, 1, rng, "aux", init="glorot")

    def param_items(self):
        return (
            self.encoder.param_items()
            + self.decoder.param_items()
            + self.aux_head.param_items()
        )

    def zero_grad(self):
        for _, _, grad in self.param_items():
            grad[...] = 0.0

    def state_dict(self):
        return [(name, value) for name, value, _ in self.param_items()]

    def load_state(self, named):
        items = self.param_items()
        for name, value, _ in items:
            if name not in named:
                raise ShapeError(f"checkpoint missing parameter {name}")
            arr = named[name]
            if arr.shape != value.shape:
                raise ShapeError(
                    f"checkpoint shape {arr.shape} != model shape "
                    f"{value.shape} for {name}"
                )
            value[...] = arr


def reparameterize(mu, logvar, eps):
    """z = mu + exp(logvar/2) * eps, with the noise draw passed in."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if mu.shape != logvar.shape or mu.shape != eps.shape:
        raise ShapeError("mu, logvar and eps must share a shape")
    return mu + np.exp(0.5 * logvar) * eps


def recon_loss(x, xhat):
    """Mean squared error over pixels (and over the batch if batched)."""
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {xhat.shape}")
    return float(np.mean((x - xhat) ** 2))


def _logsumexp(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))).squeeze(axis)


def kl_decomposed(mu, logvar, z, dataset_size, return_cache=False):
    """Minibatch-weighted estimates of (mutual info, total correlation,
    dimension-wise KL) under a standard normal prior."""
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    lv = np.atleast_2d(np.asarray(logvar, dtype=np.float64))
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    m, d = z.shape
    if m < 1:
        raise InvalidInputError("empty batch")
    if mu.shape != (m, d) or lv.shape != (m, d):
        raise ShapeError("mu/logvar/z shapes disagree")
    n = float(dataset_size)
    inv_var = np.exp(-lv)
    diff = z[:, None, :] - mu[None, :, :]  # (i, j, d)
    logq = -0.5 * (_LOG2PI + lv[None, :, :] + diff * diff * inv_var[None, :, :])
    joint = logq.sum(axis=2)  # (i, j)
    lognm = np.log(n * m)
    log_qz = _logsumexp(joint, axis=1) - lognm
    log_qzd = _logsumexp(logq, axis=1) - lognm  # (i, d)
    log_qzx = np.diagonal(joint).copy()
    log_pz = -0.5 * (_LOG2PI + z * z).sum(axis=1)
    mi = float(np.mean(log_qzx - log_qz))
    tc = float(np.mean(log_qz - log_qzd.sum(axis=1)))
    dim_kl = float(np.mean(log_qzd.sum(axis=1) - log_pz))
    if not return_cache:
        return mi, tc, dim_kl
    cache = {
        "diff": diff,
        "inv_var": inv_var,
        "logq": logq,
        "joint": joint,
        "z": z,
        "m": m,
    }
    return mi, tc, dim_kl, cache


def kl_decomposed_backward(cache, w_mi, w_tc, w_dkl):
    """Gradient of w_mi*mi + w_tc*tc + w_dkl*dim_kl w.r.t. (mu, logvar, z)."""
    diff = cache["diff"]
    inv_var = cache["inv_var"]
    logq = cache["logq"]
    joint = cache["joint"]
    z = cache["z"]
    m = cache["m"]
    c_qzx = w_mi / m
    c_qz = (w_tc - w_mi) / m
    c_qzd = (w_dkl - w_tc) / m
    c_pz = -w_dkl / m
    # softmax over j of the joint and the per-dimension log-densities
    sj = np.exp(joint - joint.max(axis=1, keepdims=True))
    sj /= sj.sum(axis=1, keepdims=True)
    sd = np.exp(logq - logq.max(axis=1, keepdims=True))
    sd /= sd.sum(axis=1, keepdims=True)
    g = c_qz * sj[:, :, None] + c_qzd * sd
    ii = np.arange(m)
    g[ii, ii, :] += c_qzx
    dldz_term = diff * inv_var[None, :, :]  # d logq / d mu[j]; negative of d/dz
    dz = -(g * dldz_term).sum(axis=1) + c_pz * (-z)
    dmu = (g * dldz_term).sum(axis=0)
    dlv = (g * (-0.5 + 0.5 * diff * diff * inv_var[None, :, :])).sum(axis=0)
    return dmu, dlv, dz


class TcvaeContext:
    """Forward-pass caches needed by tcvae_backward."""

    def __init__(self, x, eps, mu, lv, z, xhat, enc_cache, dec_cache, kl_cache, beta):
        self.x = x
        self.eps = eps
        self.mu = mu
        self.lv = lv
        self.z = z
        self.xhat = xhat
        self.enc_cache = enc_cache
        self.dec_cache = dec_cache
        self.kl_cache = kl_cache
        self.beta = beta


def tcvae_loss(model, x_batch, beta, eps_batch, dataset_size):
    """Full loss breakdown plus the context for the backward pass."""
    x = np.asarray(x_batch, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape[0] < 1:
        raise InvalidInputError("empty batch")
    if beta < 0:
        raise InvalidInputError("beta must be >= 0")
    eps = np.asarray(eps_batch, dtype=np.float64)
    mu, lv, enc_cache = model.encoder.encode(x)
    z = reparameterize(mu, lv, eps)
    xhat, dec_cache = model.decoder.decode(z)
    recon = recon_loss(x, xhat)
    mi, tc, dim_kl, kl_cache = kl_decomposed(
        mu, lv, z, dataset_size, return_cache=True
    )
    breakdown = TcvaeLossBreakdown(recon, mi, tc, dim_kl, beta)
    if not np.isfinite(breakdown.total):
        raise NumericError("non-finite VAE loss")
    ctx = TcvaeContext(x, eps, mu, lv, z, xhat, enc_cache, dec_cache, kl_cache, beta)
    return breakdown, ctx


def tcvae_backward(model, ctx, scale=1.0, extra_dmu=None):
    """Accumulates d(scale * total)/d(params); extra_dmu joins the encoder
    backward so the whole step does one encoder pass per view."""
    b = ctx.x.shape[0]
    npix = ctx.x.shape[1] * ctx.x.shape[2]
    gxhat = scale * 2.0 * (ctx.xhat - ctx.x) / (npix * b)
    gz = model.decoder.backward(ctx.dec_cache, gxhat)
    dmu_kl, dlv_kl, dz_kl = kl_decomposed_backward(
        ctx.kl_cache, w_mi=scale, w_tc=scale * ctx.beta, w_dkl=scale
    )
    gz_total = gz + dz_kl
    sigma = np.exp(0.5 * ctx.lv)
    dmu = dmu_kl + gz_total
    dlv = dlv_kl + gz_total * 0.5 * sigma * ctx.eps
    if extra_dmu is not None:
        dmu = dmu + extra_dmu
    model.encoder.backward(ctx.enc_cache, dmu, dlv)


def latent_traversal(model, z_base, dim, values):
    """Decode z_base with one latent dimension swept over the given values.

    Returns (images, variance_map): the decoded 9x9 image per value and the
    per-pixel variance across the sweep, which localizes the tracts that the
    dimension controls.
    """
    z_base = np.asarray(z_base, dtype=np.float64).reshape(-1)
    if not 0 <= dim < z_base.size:
        raise InvalidInputError(f"latent dim {dim} out of range")
    zs = np.tile(z_base, (len(values), 1))
    zs[:, dim] = values
    images, _ = model.decoder.decode(zs)
    variance = images.var(axis=0)
    return [images[i] for i in range(len(values))], variance
