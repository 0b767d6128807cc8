"""Two-component Gaussian mixture over per-sample losses.

Samples whose cross-entropy loss falls in the lower-mean component are
probably clean; the posterior of that component drives the clean/noisy
split of the training set at the start of each epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ShapeError

VAR_FLOOR = 1e-6
DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-6


@dataclass
class LossRecord:
    sample_id: int
    ce_loss: float


@dataclass
class Gmm2:
    means: np.ndarray  # sorted ascending after fit
    variances: np.ndarray
    weights: np.ndarray
    degenerate: bool = False
    loglik_history: list = field(default_factory=list)
    param_history: list = field(default_factory=list)


@dataclass
class PartitionResult:
    clean_ids: list
    noisy_ids: list
    posteriors: np.ndarray
    threshold: float


def per_sample_losses(params, cfg, features: np.ndarray, labels: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Unreduced cross-entropy per sample, dropout off.

    ``labels`` are the current hard inherited labels (ints).
    """
    if len(features) == 0:
        raise ValueError("empty dataset")
    targets = nn.one_hot(labels, cfg.class_count)
    out = np.empty(len(features))
    for lo in range(0, len(features), batch_size):
        hi = min(lo + batch_size, len(features))
        probs, _ = nn.forward(params, cfg, features[lo:hi], dropout_on=False)
        out[lo:hi] = nn.cross_entropy_per_sample(probs, targets[lo:hi])
    return out


def normalize_losses(losses: np.ndarray):
    """Affine map to [0, 1]; constant input maps to all 0.5 and flags."""
    losses = np.asarray(losses, dtype=np.float64)
    lo, hi = losses.min(), losses.max()
    if hi - lo <= 0:
        return np.full_like(losses, 0.5), True
    return (losses - lo) / (hi - lo), False


def _log_normal_pdf(x: np.ndarray, mean: float, var: float) -> np.ndarray:
    return -0.5 * (np.log(2 * np.pi * var) + (x - mean) ** 2 / var)


def _log_joint(losses: np.ndarray, means, variances, weights) -> np.ndarray:
    """(n, 2) log of weight_k * N(loss; mean_k, var_k)."""
    cols = [np.log(weights[k]) + _log_normal_pdf(losses, means[k], variances[k]) for k in range(2)]
    return np.stack(cols, axis=1)


def log_likelihood(losses: np.ndarray, means, variances, weights) -> float:
    lj = _log_joint(losses, means, variances, weights)
    m = lj.max(axis=1, keepdims=True)
    return float((m[:, 0] + np.log(np.exp(lj - m).sum(axis=1))).sum())


def fit_gmm_em(
    losses: np.ndarray,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    keep_history: bool = False,
) -> Gmm2:
    """EM fit of a two-component 1-D Gaussian mixture.

    Deterministic initialization: means at the 25th/75th loss
    percentiles, both variances at the global variance, equal weights.
    Stops when the mean log-likelihood improves by less than ``tol``
    (so tol=inf returns right after the first EM iteration). Components
    are ordered by ascending mean. An all-equal input cannot support a
    mixture and is returned flagged degenerate.
    """
    losses = np.asarray(losses, dtype=np.float64)
    n = len(losses)
    if n < 10:
        raise ValueError(f"need at least 10 samples to fit the mixture, got {n}")
    if np.ptp(losses) <= 0:
        g = Gmm2(
            means=np.array([losses[0], losses[0]]),
            variances=np.array([VAR_FLOOR, VAR_FLOOR]),
            weights=np.array([0.5, 0.5]),
            degenerate=True,
        )
        return g

    means = np.percentile(losses, [25.0, 75.0]).astype(np.float64)
    if means[0] == means[1]:
        means[1] = means[0] + max(np.std(losses), np.sqrt(VAR_FLOOR))
    variances = np.full(2, max(losses.var(), VAR_FLOOR))
    weights = np.array([0.5, 0.5])

    history = [log_likelihood(losses, means, variances, weights)]
    params_hist = [(means.copy(), variances.copy(), weights.copy())]
    for _ in range(max_iter):
        # E-step: responsibilities in log space
        lj = _log_joint(losses, means, variances, weights)
        m = lj.max(axis=1, keepdims=True)
        resp = np.exp(lj - m)
        resp /= resp.sum(axis=1, keepdims=True)
        # M-step
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        means = (resp * losses[:, None]).sum(axis=0) / nk
        variances = (resp * (losses[:, None] - means[None, :]) ** 2).sum(axis=0) / nk
        variances = np.maximum(variances, VAR_FLOOR)
        weights = nk / n
        history.append(log_likelihood(losses, means, variances, weights))
        if keep_history:
            params_hist.append((means.copy(), variances.copy(), weights.copy()))
        if (history[-1] - history[-2]) / n < tol:
            break

    order = np.argsort(means)
    g = Gmm2(
        means=means[order],
        variances=variances[order],
        weights=weights[order],
        degenerate=bool(weights[order][0] < 1e-6 or weights[order][1] < 1e-6),
        loglik_history=history,
        param_history=params_hist if keep_history else [],
    )
    return g


def clean_posterior(g: Gmm2, loss) -> np.ndarray:
    """Posterior of the lower-mean (clean) component, in log space."""
    loss = np.asarray(loss, dtype=np.float64)
    lj = _log_joint(loss, g.means, g.variances, g.weights)
    m = lj.max(axis=-1, keepdims=True)
    log_post0 = lj[..., 0] - (m[..., 0] + np.log(np.exp(lj - m).sum(axis=-1)))
    return np.exp(log_post0)


def partition(sample_ids, posteriors: np.ndarray, threshold: float = 0.5) -> PartitionResult:
    """Split ids into clean (posterior > threshold) and noisy sets."""
    sample_ids = list(sample_ids)
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if len(sample_ids) != len(posteriors):
        raise ShapeError(f"{len(sample_ids)} ids vs {len(posteriors)} posteriors")
    mask = posteriors > threshold
    clean = [sid for sid, keep in zip(sample_ids, mask) if keep]
    noisy = [sid for sid, keep in zip(sample_ids, mask) if not keep]
    return PartitionResult(clean_ids=clean, noisy_ids=noisy, posteriors=posteriors, threshold=threshold)
