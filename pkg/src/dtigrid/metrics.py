"""Evaluation suite: KNN separability, MIG, accuracy/F1, reconstruction MSE."""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, LabelAsFactorWarning
from .vae import recon_loss, reparameterize  # noqa: F401  (recon used below)


def knn_predict(train_mu, train_labels, query_mu, k=3, exclude_self=False):
    """Majority vote of the k nearest training points (Euclidean).

    Ties are broken toward the nearest neighbor's label.  With
    exclude_self=True, queries are assumed to be the training set itself
    and each point's own row is skipped (leave-one-out).
    """
    train_mu = np.asarray(train_mu, dtype=np.float64)
    query_mu = np.asarray(query_mu, dtype=np.float64)
    train_labels = np.asarray(train_labels)
    d = (
        np.sum(query_mu**2, axis=1)[:, None]
        - 2.0 * query_mu @ train_mu.T
        + np.sum(train_mu**2, axis=1)[None, :]
    )
    if exclude_self:
        np.fill_diagonal(d, np.inf)
    preds = np.empty(query_mu.shape[0], dtype=train_labels.dtype)
    for i in range(query_mu.shape[0]):
        order = np.argsort(d[i], kind="stable")[:k]
        votes = train_labels[order]
        vals, counts = np.unique(votes, return_counts=True)
        top = counts.max()
        winners = vals[counts == top]
        if len(winners) == 1:
            preds[i] = winners[0]
        else:
            preds[i] = votes[0]  # nearest neighbor settles the tie
    return preds


def knn_separability(mu, labels, k=3):
    """Leave-one-out KNN accuracy (%) on the latent means."""
    mu = np.asarray(mu, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if mu.shape[0] < k + 1:
        raise InvalidInputError(f"need at least {k + 1} rows for k={k}")
    if len(np.unique(labels)) < 2:
        raise InvalidInputError("both classes must be present")
    preds = knn_predict(mu, labels, mu, k=k, exclude_self=True)
    return float(100.0 * np.mean(preds == labels))


def _equal_frequency_bins(values, n_bins):
    """Rank-based equal-frequency binning; stable under strictly monotone
    transforms because stable ranks are."""
    n = len(values)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(n)
    return (ranks * n_bins) // n


def _discrete_mi(a, b):
    """Plug-in mutual information (nats) between two integer code arrays."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    n = len(a)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    na = ai.max() + 1
    nb = bi.max() + 1
    joint = np.bincount(ai * nb + bi, minlength=na * nb).reshape(na, nb) / n
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa[:, None] * pb[None, :])[nz])))


def _entropy(codes):
    _, counts = np.unique(codes, return_counts=True)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)))


def mig(latents, factors, factor_names=None, n_bins=20):
    """Mutual Information Gap over discrete ground-truth factors.

    Latents are discretized into equal-frequency bins; per factor the gap
    between the two most informative latent dimensions is normalized by the
    factor entropy; the mean over usable factors is returned.
    """
    z = np.asarray(latents, dtype=np.float64)
    v = np.atleast_2d(np.asarray(factors))
    if v.shape[0] == z.shape[0] and v.ndim == 2:
        pass
    else:
        v = v.T
    if z.ndim != 2 or z.shape[1] < 2:
        raise InvalidInputError("need at least 2 latent dimensions")
    if v.shape[0] != z.shape[0]:
        raise InvalidInputError("factor rows must align with latent rows")
    n, d = z.shape
    codes = np.stack([_equal_frequency_bins(z[:, j], n_bins) for j in range(d)])
    gaps = []
    for kf in range(v.shape[1]):
        fac = v[:, kf]
        if len(np.unique(fac)) < 2:
            name = factor_names[kf] if factor_names else str(kf)
            warnings.warn(f"factor {name} is constant; skipped", UserWarning,
                          stacklevel=2)
            continue
        h = _entropy(fac)
        mis = np.array([_discrete_mi(codes[j], fac) for j in range(d)])
        top2 = np.sort(mis)[-2:]
        gaps.append((top2[1] - top2[0]) / h)
    if not gaps:
        raise InvalidInputError("all factors are constant")
    return float(np.mean(gaps))


def accuracy_f1(predictions, labels):
    """Accuracy and positive-class F1, both as percentages."""
    p = np.asarray(predictions).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if p.size != y.size:
        raise InvalidInputError("predictions and labels differ in length")
    if p.size == 0:
        raise InvalidInputError("empty inputs")
    acc = 100.0 * float(np.mean(p == y))
    tp = float(np.sum((p == 1) & (y == 1)))
    fp = float(np.sum((p == 1) & (y == 0)))
    fn = float(np.sum((p == 0) & (y == 1)))
    denom = 2 * tp + fp + fn
    f1 = 100.0 * (2 * tp / denom) if denom > 0 else 0.0
    return acc, f1


def stratified_splits(labels, n_splits, test_frac, seed):
    """Deterministic stratified holdout splits: list of (train_idx, test_idx)."""
    labels = np.asarray(labels).reshape(-1)
    out = []
    for s in range(n_splits):
        rng = np.random.default_rng((seed, s))
        test = []
        for val in np.unique(labels):
            idx = np.flatnonzero(labels == val)
            idx = rng.permutation(idx)
            n_test = max(1, int(round(test_frac * len(idx))))
            test.append(idx[:n_test])
        test = np.sort(np.concatenate(test))
        train = np.setdiff1d(np.arange(len(labels)), test)
        out.append((train, test))
    return out


@dataclass
class MetricsReport:
    accuracy: float
    f1: float
    separability: float
    recon_mse: float
    mig: float
    folds: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(
            {
                "accuracy": self.accuracy,
                "f1": self.f1,
                "separability": self.separability,
                "recon_mse": self.recon_mse,
                "mig": self.mig,
                "folds": self.folds,
            },
            indent=2,
            sort_keys=True,
        )


def evaluate_model(model, images, labels, dataset_size=None, factors=None,
                   factor_names=None, n_splits=5, test_frac=0.2, seed=0, k=3):
    """Metrics for a trained model on a labeled image set.

    Per stratified split: aux-head and KNN accuracy/F1 on the test part and
    test reconstruction MSE.  Separability (leave-one-out KNN) and MIG use
    the full embedding table.  Without a factor table, MIG falls back to the
    class label as the single factor (flagged with a warning).
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    mu, _, _ = model.encoder.encode(images)
    xhat_all, _ = model.decoder.decode(mu)

    label_as_factor = factors is None
    if label_as_factor:
        warnings.warn(
            "no factor table; computing MIG against the class label",
            LabelAsFactorWarning,
            stacklevel=2,
        )
        factors = labels[:, None]
        factor_names = ["label"]

    folds = []
    for train_idx, test_idx in stratified_splits(labels, n_splits, test_frac, seed):
        logits, _ = model.aux_head.forward(mu[test_idx])
        aux_pred = (logits[:, 0] > 0).astype(np.int64)
        aux_acc, aux_f1 = accuracy_f1(aux_pred, labels[test_idx])
        knn_pred = knn_predict(mu[train_idx], labels[train_idx], mu[test_idx], k=k)
        knn_acc, knn_f1 = accuracy_f1(knn_pred, labels[test_idx])
        fold_recon = recon_loss(images[test_idx], xhat_all[test_idx])
        folds.append(
            {
                "aux_accuracy": aux_acc,
                "aux_f1": aux_f1,
                "knn_accuracy": knn_acc,
                "knn_f1": knn_f1,
                "recon_mse": fold_recon,
            }
        )
    sep = knn_separability(mu, labels, k=k)
    mig_value = mig(mu, factors, factor_names=factor_names)
    report = MetricsReport(
        accuracy=float(np.mean([f["aux_accuracy"] for f in folds])),
        f1=float(np.mean([f["aux_f1"] for f in folds])),
        separability=sep,
        recon_mse=float(np.mean([f["recon_mse"] for f in folds])),
        mig=mig_value,
        folds=folds,
    )
    if label_as_factor:
        for f in report.folds:
            f["mig_label_as_factor"] = True
    return report
