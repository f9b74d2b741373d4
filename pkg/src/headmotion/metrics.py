"""Evaluation metrics: R², Spearman's ρ, AES, covariate and threshold analyses.

Spearman's ρ follows the standard [-1, 1] definition (Pearson on average
ranks) with a two-sided t-approximation p-value and an exact permutation
option for tiny samples.  AES is the no-reference edge-strength baseline:
mean gradient magnitude over Otsu-selected edge voxels, slice by slice.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import islice, permutations
from math import factorial
from typing import NamedTuple

import numpy as np
from scipy import stats as _stats

from .errors import DomainError
from .io import DatasetManifest, Volume

__all__ = [
    "CovariateCorrelation",
    "EvalReport",
    "ThresholdSeparation",
    "aes",
    "correlate_covariate",
    "r2",
    "spearman",
    "threshold_separation",
]


@dataclass(frozen=True)
class EvalReport:
    """Headline regression metrics for one evaluation run."""

    r2: float
    spearman_rho: float
    spearman_p: float
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise DomainError("too_few_samples", f"correlation reports need n >= 3, got {self.n}")
        if self.r2 > 1.0 + 1e-12:
            raise DomainError("bad_metric", f"r2 cannot exceed 1, got {self.r2}")
        if abs(self.spearman_rho) > 1.0 + 1e-9:
            raise DomainError("bad_metric", f"spearman rho outside [-1, 1]: {self.spearman_rho}")
        if not 0.0 <= self.spearman_p <= 1.0:
            raise DomainError("bad_metric", f"p-value outside [0, 1]: {self.spearman_p}")


class CovariateCorrelation(NamedTuple):
    rho: float
    p: float
    slope: float
    intercept: float


class ThresholdSeparation(NamedTuple):
    threshold: float
    accuracy: float
    auc: float


def _clean_pair(y, yhat, min_n):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.ndim != 1 or y.shape != yhat.shape:
        raise DomainError(
            "length_mismatch", f"inputs must be equal-length vectors, got {y.shape} and {yhat.shape}"
        )
    if y.size < min_n:
        raise DomainError("too_few_samples", f"need at least {min_n} samples, got {y.size}")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(yhat))):
        raise DomainError("bad_values", "inputs contain non-finite values")
    return y, yhat


def r2(y, yhat) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot."""
    y, yhat = _clean_pair(y, yhat, 2)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DomainError("constant_target", "R2 is undefined for a constant target")
    ss_res = float(np.sum((y - yhat) ** 2))
    return 1.0 - ss_res / ss_tot


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=float)
    sorted_values = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_values[j + 1] == sorted_values[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.sum(xc * xc) * np.sum(yc * yc))
    return float(np.dot(xc, yc) / denom)


def spearman(y, yhat, exact: bool = False) -> tuple[float, float]:
    """Spearman's rank correlation with a two-sided p-value.

    The p-value uses the t-approximation t = rho * sqrt((n-2)/(1-rho^2))
    by default; with ``exact=True`` (allowed for n <= 10) it enumerates
    all rank permutations instead.
    """
    y, yhat = _clean_pair(y, yhat, 3)
    if np.all(y == y[0]) or np.all(yhat == yhat[0]):
        raise DomainError("constant_input", "rank correlation is undefined for constant input")
    ry = _average_ranks(y)
    rh = _average_ranks(yhat)
    rho = _pearson(ry, rh)
    rho = float(np.clip(rho, -1.0, 1.0))
    n = y.size
    if exact:
        if n > 10:
            raise DomainError(
                "exact_unavailable", f"exact permutation p-value is limited to n <= 10, got {n}"
            )
        p = _exact_permutation_p(ry, rh, rho)
    elif abs(rho) == 1.0:
        p = 0.0
    else:
        t = rho * np.sqrt((n - 2) / (1.0 - rho * rho))
        p = float(2.0 * _stats.t.sf(abs(t), df=n - 2))
    return rho, min(p, 1.0)


def _exact_permutation_p(rx: np.ndarray, ry: np.ndarray, rho_obs: float) -> float:
    """Two-sided exact p: share of rank permutations at least as extreme."""
    n = rx.size
    xc = rx - rx.mean()
    yc = ry - ry.mean()
    denom = np.sqrt(np.sum(xc * xc) * np.sum(yc * yc))
    hits = 0
    perms = permutations(yc)
    chunk_size = 40320
    while True:
        chunk = np.array(list(islice(perms, chunk_size)))
        if chunk.size == 0:
            break
        rhos = chunk @ xc / denom
        hits += int(np.count_nonzero(np.abs(rhos) >= abs(rho_obs) - 1e-12))
    return hits / factorial(n)


def _otsu_threshold(values: np.ndarray) -> float:
    """Otsu's method on a 256-bin histogram of ``values``."""
    lo = float(values.min())
    hi = float(values.max())
    counts, edges = np.histogram(values, bins=256, range=(lo, hi))
    counts = counts.astype(float)
    total = counts.sum()
    mids = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(counts)
    w1 = total - w0
    mass0 = np.cumsum(counts * mids)
    mass1 = mass0[-1] - mass0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = mass0 / w0
        mu1 = mass1 / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between[~np.isfinite(between)] = -1.0
    return float(edges[int(np.argmax(between)) + 1])


def aes(volume: Volume) -> float:
    """Average edge strength of a volume.

    Per axial slice the gradient magnitude is computed by central
    differences, an edge mask is taken as the voxels above the Otsu
    threshold of that magnitude, and the slice score is the mean
    magnitude over the mask.  The volume score averages the slices that
    contain at least one edge voxel.
    """
    data = volume.data.astype(np.float64)
    slice_scores = []
    for k in range(data.shape[2]):
        plane = data[:, :, k]
        if plane.max() == plane.min():
            continue
        gx, gy = np.gradient(plane)
        magnitude = np.hypot(gx, gy)
        if magnitude.max() == magnitude.min():
            continue
        threshold = _otsu_threshold(magnitude)
        edges = magnitude > threshold
        if not np.any(edges):
            continue
        slice_scores.append(float(magnitude[edges].mean()))
    if not slice_scores:
        raise DomainError("no_edges", "no slice contains detectable edges")
    return float(np.mean(slice_scores))


def correlate_covariate(scores, covariate_name: str, manifest: DatasetManifest) -> CovariateCorrelation:
    """Spearman correlation of per-entry scores against a manifest covariate.

    ``scores`` must align with the manifest entry order.  The returned
    least-squares line (score against covariate) is for reporting only.
    """
    scores = np.asarray(scores, dtype=float)
    entries = list(manifest)
    if scores.shape != (len(entries),):
        raise DomainError(
            "length_mismatch",
            f"got {scores.shape[0] if scores.ndim == 1 else scores.shape} scores "
            f"for {len(entries)} manifest entries",
        )
    missing = [e.volume_path for e in entries if covariate_name not in e.covariates]
    if missing:
        raise DomainError(
            "missing_covariate",
            f"covariate {covariate_name!r} missing for: " + ", ".join(missing),
        )
    values = np.array([float(e.covariates[covariate_name]) for e in entries])
    rho, p = spearman(values, scores)
    slope, intercept = np.polyfit(values, scores, 1)
    return CovariateCorrelation(rho=rho, p=p, slope=float(slope), intercept=float(intercept))


def threshold_separation(scores, binary_labels) -> ThresholdSeparation:
    """Best accuracy threshold and AUC for separating two labelled groups.

    Scores are oriented so that label 1 is expected above the threshold.
    AUC comes from the rank statistic (ties contribute half).  The
    threshold maximizing accuracy is reported; among equally accurate
    candidates the one nearest the midpoint of the closest cross-class
    pair of scores wins.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(binary_labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise DomainError("length_mismatch", "scores and labels must be equal-length vectors")
    if not np.all(np.isin(labels, (0, 1))):
        raise DomainError("bad_labels", "labels must be 0 or 1")
    labels = labels.astype(int)
    positives = scores[labels == 1]
    negatives = scores[labels == 0]
    if positives.size == 0 or negatives.size == 0:
        raise DomainError("single_class", "both classes must be non-empty")

    ranks = _average_ranks(scores)
    u = float(ranks[labels == 1].sum()) - positives.size * (positives.size + 1) / 2.0
    auc = u / (positives.size * negatives.size)

    distinct = np.unique(scores)
    candidates = [distinct[0] - 1.0]
    candidates.extend(0.5 * (distinct[:-1] + distinct[1:]))
    candidates.append(distinct[-1] + 1.0)
    candidates = np.array(candidates)
    predicted = scores[None, :] > candidates[:, None]
    accuracies = np.mean(predicted == (labels == 1)[None, :], axis=1)
    best_accuracy = float(accuracies.max())

    gaps = np.abs(negatives[:, None] - positives[None, :])
    i, j = np.unravel_index(int(np.argmin(gaps)), gaps.shape)
    preferred = 0.5 * (negatives[i] + positives[j])
    best_mask = accuracies >= best_accuracy - 1e-12
    winners = candidates[best_mask]
    threshold = float(winners[int(np.argmin(np.abs(winners - preferred)))])
    return ThresholdSeparation(threshold=threshold, accuracy=best_accuracy, auc=float(auc))
