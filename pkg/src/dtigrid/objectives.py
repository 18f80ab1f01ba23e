"""Latent-shaping objectives attached to the VAE backbone.

Three training variants: an auxiliary binary classifier on the latent mean,
a batch-hard triplet loss, and an NT-Xent contrastive loss over augmented
view pairs.  All losses operate on mu, never on the sampled z.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .diffcore.layers import sigmoid
from .errors import DegenerateBatchWarning, InvalidInputError, NumericError
from .vae import TcvaeLossBreakdown, tcvae_backward, tcvae_loss

VARIANTS = ("none", "aux", "triplet", "simclr")


@dataclass
class TripletConfig:
    margin: float = 0.2

    def __post_init__(self):
        if not (np.isfinite(self.margin) and self.margin > 0):
            raise InvalidInputError("triplet margin must be finite and > 0")


@dataclass
class SimclrConfig:
    temperature: float = 0.5
    noise_sigma: float = 0.02
    mask_prob: float = 0.1

    def __post_init__(self):
        if not (0 < self.temperature <= 10):
            raise InvalidInputError("temperature must be in (0, 10]")
        if not (0 <= self.mask_prob < 1):
            raise InvalidInputError("mask probability must be in [0, 1)")
        if self.noise_sigma < 0:
            raise InvalidInputError("noise sigma must be >= 0")


@dataclass
class LossWeights:
    lambda_vae: float = 1.0
    lambda_cls: float = 10.0
    lambda_triplet: float = 10.0
    lambda_simclr: float = 1.0

    def __post_init__(self):
        for name in ("lambda_vae", "lambda_cls", "lambda_triplet", "lambda_simclr"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be >= 0")


def aux_bce(logit, y):
    """Stable logit-space binary cross-entropy for a single example."""
    if y not in (0, 1):
        raise InvalidInputError("label must be 0 or 1")
    return float(max(logit, 0.0) - logit * y + np.log1p(np.exp(-abs(logit))))


def aux_bce_batch(logits, ys):
    """Mean BCE over a batch; returns (loss, dloss/dlogits)."""
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    n = logits.size
    losses = np.maximum(logits, 0.0) - logits * ys + np.log1p(np.exp(-np.abs(logits)))
    grad = (sigmoid(logits) - ys) / n
    return float(losses.mean()), grad


def _pairwise_sq_dists(mu):
    sq = np.sum(mu * mu, axis=1)
    d = sq[:, None] - 2.0 * mu @ mu.T + sq[None, :]
    return np.maximum(d, 0.0)


def batch_hard_triplet(mu, labels, margin=0.2, return_grad=False):
    """Batch-hard triplet loss on latent means with squared Euclidean distance.

    Per anchor: hardest positive = farthest same-class point, hardest
    negative = closest other-class point; hinge at the margin; mean over
    anchors that have both.  Anchors lacking a positive or a negative are
    skipped; a batch with no valid anchor returns 0 with a warning.
    """
    mu = np.asarray(mu, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    m = mu.shape[0]
    d = _pairwise_sq_dists(mu)
    same = labels[:, None] == labels[None, :]
    eye = np.eye(m, dtype=bool)
    pos_mask = same & ~eye
    neg_mask = ~same
    valid = pos_mask.any(axis=1) & neg_mask.any(axis=1)
    if not valid.any():
        warnings.warn(
            "no anchor has both a positive and a negative",
            DegenerateBatchWarning,
            stacklevel=2,
        )
        if return_grad:
            return 0.0, np.zeros_like(mu)
        return 0.0
    d_pos = np.where(pos_mask, d, -np.inf)
    d_neg = np.where(neg_mask, d, np.inf)
    hard_p = d_pos.argmax(axis=1)
    hard_n = d_neg.argmin(axis=1)
    anchors = np.flatnonzero(valid)
    per_anchor = d[anchors, hard_p[anchors]] - d[anchors, hard_n[anchors]] + margin
    active = per_anchor > 0
    loss = float(np.maximum(per_anchor, 0.0).mean())
    if not return_grad:
        return loss
    grad = np.zeros_like(mu)
    scale = 1.0 / anchors.size
    for a, act in zip(anchors, active):
        if not act:
            continue
        p = hard_p[a]
        n = hard_n[a]
        grad[a] += scale * 2.0 * ((mu[a] - mu[p]) - (mu[a] - mu[n]))
        grad[p] += scale * -2.0 * (mu[a] - mu[p])
        grad[n] += scale * 2.0 * (mu[a] - mu[n])
    return loss, grad


def augment(image, rng_seed, config, occupied_mask=None):
    """Gaussian noise on occupied cells, then random zeroing of occupied cells.

    Background cells stay exactly 0; the result is clipped to [0, 1].  The
    occupancy mask defaults to the nonzero pixels of the input.
    """
    x = np.asarray(image, dtype=np.float64)
    if occupied_mask is None:
        occupied_mask = x != 0.0
    rng = np.random.default_rng(rng_seed)
    noise = rng.normal(0.0, config.noise_sigma, size=x.shape)
    y = x + noise * occupied_mask
    drop = rng.random(size=x.shape) < config.mask_prob
    y = np.where(occupied_mask & drop, 0.0, y)
    y = np.clip(y, 0.0, 1.0)
    y = np.where(occupied_mask, y, 0.0)
    return y


def simclr_ntxent(mu_a, mu_b, temperature, return_grad=False):
    """NT-Xent over 2N views; each view's positive is its augmentation pair."""
    a = np.atleast_2d(np.asarray(mu_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(mu_b, dtype=np.float64))
    if a.shape != b.shape:
        raise InvalidInputError("the two view batches must be aligned")
    n = a.shape[0]
    if n < 2:
        raise InvalidInputError("NT-Xent needs at least 2 pairs")
    u = np.concatenate([a, b], axis=0)
    norms = np.linalg.norm(u, axis=1)
    if np.any(norms == 0):
        raise NumericError("zero-norm embedding: cosine similarity undefined")
    un = u / norms[:, None]
    s = (un @ un.T) / temperature
    m = 2 * n
    pos = np.concatenate([np.arange(n, m), np.arange(0, n)])
    mask = ~np.eye(m, dtype=bool)
    smax = np.where(mask, s, -np.inf).max(axis=1, keepdims=True)
    ex = np.where(mask, np.exp(s - smax), 0.0)
    lse = (smax[:, 0] + np.log(ex.sum(axis=1)))
    losses = -s[np.arange(m), pos] + lse
    loss = float(losses.mean())
    if not return_grad:
        return loss
    # gradient w.r.t. the similarity matrix
    soft = ex / ex.sum(axis=1, keepdims=True)
    gs = soft / m
    gs[np.arange(m), pos] -= 1.0 / m
    gs = gs / temperature
    # through cosine similarity: s_ij (i != j) depends on u_i and u_j
    np.fill_diagonal(gs, 0.0)
    coef = gs + gs.T  # cos_ij feeds both row i and row j of s
    gun = coef @ un
    # back through normalization u -> u/|u|
    dots = np.sum(gun * un, axis=1, keepdims=True)
    gu = (gun - dots * un) / norms[:, None]
    return loss, gu[:n], gu[n:]


@dataclass
class CombinedBreakdown:
    vae: TcvaeLossBreakdown
    variant: str
    variant_loss: float
    weights: LossWeights
    total: float = field(init=False)

    def __post_init__(self):
        lam = {
            "none": 0.0,
            "aux": self.weights.lambda_cls,
            "triplet": self.weights.lambda_triplet,
            "simclr": self.weights.lambda_simclr,
        }[self.variant]
        self.total = self.weights.lambda_vae * self.vae.total + lam * self.variant_loss


def combined_loss(
    model,
    x_batch,
    labels,
    variant,
    weights,
    beta,
    eps_batch,
    dataset_size,
    triplet_config=None,
    simclr_config=None,
    aug_seed=0,
    occupied_mask=None,
    compute_grad=True,
):
    """Forward (and optionally backward) pass for one training variant.

    Returns a CombinedBreakdown; when compute_grad is set, parameter
    gradients are accumulated into the model (callers zero them first).
    For the simclr variant the VAE terms see only the clean batch and the
    contrastive term sees only the two augmented views.
    """
    if variant not in VARIANTS:
        raise InvalidInputError(f"unknown variant {variant!r}")
    x = np.asarray(x_batch, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    breakdown, ctx = tcvae_loss(model, x, beta, eps_batch, dataset_size)
    variant_loss = 0.0
    extra_dmu = None
    lam_vae = weights.lambda_vae

    if variant == "aux":
        logits, aux_cache = model.aux_head.forward(ctx.mu)
        variant_loss, dlogit = aux_bce_batch(logits[:, 0], labels)
        if compute_grad:
            extra_dmu = model.aux_head.backward(
                aux_cache, weights.lambda_cls * dlogit[:, None]
            )
    elif variant == "triplet":
        cfg = triplet_config or TripletConfig()
        if compute_grad:
            variant_loss, gmu = batch_hard_triplet(
                ctx.mu, labels, cfg.margin, return_grad=True
            )
            extra_dmu = weights.lambda_triplet * gmu
        else:
            variant_loss = batch_hard_triplet(ctx.mu, labels, cfg.margin)
    elif variant == "simclr":
        cfg = simclr_config or SimclrConfig()
        seeds = np.random.default_rng(aug_seed).integers(0, 2**63, size=(2, x.shape[0]))
        x1 = np.stack(
            [augment(img, s, cfg, occupied_mask) for img, s in zip(x, seeds[0])]
        )
        x2 = np.stack(
            [augment(img, s, cfg, occupied_mask) for img, s in zip(x, seeds[1])]
        )
        mu1, _, cache1 = model.encoder.encode(x1)
        mu2, _, cache2 = model.encoder.encode(x2)
        if compute_grad:
            variant_loss, g1, g2 = simclr_ntxent(
                mu1, mu2, cfg.temperature, return_grad=True
            )
            zero = np.zeros_like(mu1)
            model.encoder.backward(cache1, weights.lambda_simclr * g1, zero)
            model.encoder.backward(cache2, weights.lambda_simclr * g2, zero)
        else:
            variant_loss = simclr_ntxent(mu1, mu2, cfg.temperature)

    if compute_grad:
        tcvae_backward(model, ctx, scale=lam_vae, extra_dmu=extra_dmu)
    return CombinedBreakdown(breakdown, variant, variant_loss, weights)
