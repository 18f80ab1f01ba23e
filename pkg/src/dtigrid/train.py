"""Training loop and run configuration."""

from dataclasses import dataclass, field, asdict

import numpy as np

from .diffcore import Adam
from .errors import InvalidInputError
from .objectives import (
    LossWeights,
    SimclrConfig,
    TripletConfig,
    VARIANTS,
    combined_loss,
)
from .vae import LATENT_DIM, TcvaeModel


@dataclass
class RunConfig:
    variant: str = "none"
    beta: float = 5.0
    lambda_vae: float = 1.0
    lambda_cls: float = 10.0
    lambda_triplet: float = 10.0
    lambda_simclr: float = 1.0
    margin: float = 0.2
    temperature: float = 0.5
    aug_sigma: float = 0.02
    aug_p: float = 0.1
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 200
    seed: int = 0
    latent_dim: int = LATENT_DIM

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"unknown variant {self.variant!r}")
        if self.beta < 0:
            raise InvalidInputError("beta must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidInputError("batch_size >= 1 and epochs >= 0 required")
        if self.lr <= 0:
            raise InvalidInputError("lr must be > 0")

    def weights(self):
        return LossWeights(
            self.lambda_vae, self.lambda_cls, self.lambda_triplet, self.lambda_simclr
        )

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochStats:
    epoch: int
    recon: float
    mi: float
    tc: float
    dim_kl: float
    variant_loss: float
    total: float

    HEADER = "epoch,recon,mi,tc,dim_kl,variant_loss,total"

    def csv_row(self):
        return (
            f"{self.epoch},{self.recon!r},{self.mi!r},{self.tc!r},"
            f"{self.dim_kl!r},{self.variant_loss!r},{self.total!r}"
        )


def train_model(images, labels, config, occupied_mask=None, model=None):
    """Train the selected variant; returns (model, per-epoch stats).

    Deterministic per config.seed: shuffling, reparameterization noise and
    augmentation seeds all derive from one seeded generator.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = images.shape[0]
    if n < 1:
        raise InvalidInputError("empty training set")
    if model is None:
        model = TcvaeModel(seed=config.seed, latent_dim=config.latent_dim)
    optimizer = Adam(model.param_items(), lr=config.lr)
    rng = np.random.default_rng((config.seed, 0xD71))
    weights = config.weights()
    tri_cfg = TripletConfig(margin=config.margin)
    sim_cfg = SimclrConfig(
        temperature=config.temperature,
        noise_sigma=config.aug_sigma,
        mask_prob=config.aug_p,
    )
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(5)
        total_sum = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if idx.size < 2:
                continue  # aggregate KL terms need at least 2 samples
            x = images[idx]
            y = labels[idx]
            eps = rng.standard_normal((idx.size, config.latent_dim))
            aug_seed = int(rng.integers(0, 2**62))
            model.zero_grad()
            bd = combined_loss(
                model,
                x,
                y,
                config.variant,
                weights,
                config.beta,
                eps,
                dataset_size=n,
                triplet_config=tri_cfg,
                simclr_config=sim_cfg,
                aug_seed=aug_seed,
                occupied_mask=occupied_mask,
            )
            optimizer.step()
            sums += (bd.vae.recon, bd.vae.mi, bd.vae.tc, bd.vae.dim_kl,
                     bd.variant_loss)
            total_sum += bd.total
            n_batches += 1
        if n_batches:
            means = sums / n_batches
            history.append(
                EpochStats(
                    epoch,
                    means[0],
                    means[1],
                    means[2],
                    means[3],
                    means[4],
                    total_sum / n_batches,
                )
            )
    return model, history
