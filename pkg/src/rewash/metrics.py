"""Detection and quality metrics: bit accuracy, TPR at fixed FPR, PSNR,
and a Frechet distance over pooled features of a frozen encoder."""

from __future__ import annotations

import warnings
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

PSNR_CAP_DB = 100.0


class MetricError(ValueError):
    """Invalid metric inputs."""


def bit_accuracy(recovered: Sequence[int], truth: Sequence[int]) -> float:
    """Fraction of matching bits."""
    rec = np.asarray(recovered)
    tru = np.asarray(truth)
    if rec.shape != tru.shape:
        raise MetricError(f"bit length mismatch: {rec.shape} vs {tru.shape}")
    if rec.size == 0:
        raise MetricError("empty bit sequences")
    return float(np.mean(rec == tru))


def tpr_at_fpr(pos: Sequence[float], neg: Sequence[float], fpr: float = 0.01) -> float:
    """True-positive rate at the loosest threshold keeping FPR <= fpr.

    The threshold is the smallest observed score t with
    fraction(neg >= t) <= fpr; scores >= t count as detections. When even
    the strictest observed score lets too many negatives through, the
    threshold moves above every observed score and the TPR is 0.
    """
    pos_a = np.asarray(pos, dtype=np.float64)
    neg_a = np.asarray(neg, dtype=np.float64)
    if pos_a.size == 0 or neg_a.size == 0:
        raise MetricError("pos and neg score sets must be nonempty")
    if not np.all(np.isfinite(pos_a)) or not np.all(np.isfinite(neg_a)):
        raise MetricError("scores must be finite")
    candidates = np.unique(np.concatenate([pos_a, neg_a]))
    neg_sorted = np.sort(neg_a)
    n_neg = neg_a.size
    for t in candidates:
        # fraction of negatives >= t
        frac = (n_neg - np.searchsorted(neg_sorted, t, side="left")) / n_neg
        if frac <= fpr:
            return float(np.mean(pos_a >= t))
    return 0.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio on the [0, 1] scale, capped at 100 dB."""
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    if a_arr.shape != b_arr.shape:
        raise MetricError(f"shape mismatch: {a_arr.shape} vs {b_arr.shape}")
    mse = float(np.mean((a_arr - b_arr) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def frechet_gaussian(
    mu_a: np.ndarray, cov_a: np.ndarray, mu_b: np.ndarray, cov_b: np.ndarray
) -> float:
    """Frechet distance between two Gaussians:
    ||mu_a - mu_b||^2 + Tr(cov_a + cov_b - 2 (cov_a cov_b)^{1/2})."""
    diff = np.asarray(mu_a, dtype=np.float64) - np.asarray(mu_b, dtype=np.float64)
    covmean, _ = scipy.linalg.sqrtm(np.asarray(cov_a) @ np.asarray(cov_b), disp=False)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    val = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(covmean))
    return max(0.0, val)


def feature_moments(
    images: Sequence[np.ndarray], encoder: Callable[[Sequence[np.ndarray]], np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of encoder features; shrinks the covariance toward
    its diagonal scale when the set is too small for a stable estimate."""
    feats = np.asarray(encoder(images), dtype=np.float64)
    if feats.ndim != 2:
        raise MetricError(f"encoder must return an NxD feature matrix, got {feats.shape}")
    n, d = feats.shape
    mu = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False)
    cov = np.atleast_2d(cov)
    if n < 2 * d:
        warnings.warn(
            f"{n} samples for {d}-dim features is below the 2x-dim guideline; "
            "applying diagonal shrinkage",
            stacklevel=2,
        )
        lam = 0.1
        cov = (1 - lam) * cov + lam * np.eye(d) * np.trace(cov) / d
    return mu, cov


def feature_fid(
    set_a: Sequence[np.ndarray],
    set_b: Sequence[np.ndarray],
    encoder: Callable[[Sequence[np.ndarray]], np.ndarray],
) -> float:
    """Frechet distance between the feature moments of two image sets."""
    mu_a, cov_a = feature_moments(set_a, encoder)
    mu_b, cov_b = feature_moments(set_b, encoder)
    return frechet_gaussian(mu_a, cov_a, mu_b, cov_b)
