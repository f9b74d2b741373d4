"""Soft-bin encoding of motion scores and the losses trained against it.

A scalar motion score becomes a probability distribution over a fixed
grid of prototype bins spanning the expected [0, 3.12] mm/s range; the
network learns that distribution under a Kullback-Leibler loss and its
expected value is decoded back to mm/s.  A plain MSE head is kept as the
ablation comparator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "BinGrid",
    "Prediction",
    "SoftLabel",
    "decode",
    "encode",
    "kl_loss",
    "mse_head_loss",
]


@dataclass(frozen=True)
class BinGrid:
    """Uniform prototype bins over an expected motion-score range."""

    vmin: float = 0.0
    vmax: float = 3.12
    count: int = 40

    def __post_init__(self):
        if not isinstance(self.count, (int, np.integer)) or self.count < 2:
            raise ConfigError("bad_grid", f"bin count must be an integer >= 2, got {self.count!r}")
        if not (np.isfinite(self.vmin) and np.isfinite(self.vmax) and self.vmax > self.vmin):
            raise ConfigError(
                "bad_grid", f"need finite vmax > vmin, got [{self.vmin!r}, {self.vmax!r}]"
            )

    @property
    def width(self) -> float:
        return (self.vmax - self.vmin) / self.count

    @property
    def centers(self) -> np.ndarray:
        """Bin centers c_i = vmin + (i + 0.5) * width."""
        return self.vmin + (np.arange(self.count) + 0.5) * self.width


def _as_probabilities(p, count: int, tol: float) -> np.ndarray:
    probs = np.asarray(getattr(p, "probabilities", p), dtype=float)
    if probs.shape != (count,):
        raise DomainError(
            "bad_probabilities", f"expected {count} probabilities, got shape {probs.shape}"
        )
    if not np.all(np.isfinite(probs)) or np.any(probs < 0.0):
        raise DomainError("bad_probabilities", "probabilities must be finite and nonnegative")
    if abs(float(probs.sum()) - 1.0) > tol:
        raise DomainError(
            "bad_probabilities", f"probabilities sum to {probs.sum()!r}, expected 1 within {tol}"
        )
    return probs


@dataclass(frozen=True)
class SoftLabel:
    """Gaussian soft label over the bin grid; sums to one within 1e-9."""

    probabilities: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=float)
        object.__setattr__(self, "probabilities", probs)
        _as_probabilities(probs, probs.size if probs.ndim == 1 else -1, 1e-9)


@dataclass(frozen=True)
class Prediction:
    """Softmax network output over the bin grid; strictly positive."""

    probabilities: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=float)
        object.__setattr__(self, "probabilities", probs)
        _as_probabilities(probs, probs.size if probs.ndim == 1 else -1, 1e-6)
        if np.any(probs <= 0.0):
            raise DomainError("bad_probabilities", "softmax probabilities must be strictly positive")


def encode(value: float, grid: BinGrid | None = None, sigma: float | None = None) -> SoftLabel:
    """Encode a motion score as a Gaussian soft label over the bins.

    Parameters
    ----------
    value : float
        Motion score in mm/s.  Values outside the grid range are clamped
        to it (with a warning) rather than rejected; the range was sized
        generously, so clamping is the sensible fallback for stragglers.
    grid : BinGrid, optional
        Defaults to the 40-bin [0, 3.12] mm/s grid.
    sigma : float, optional
        Gaussian width of the label; defaults to one bin width.

    Returns
    -------
    SoftLabel
        p_i proportional to exp(-(value - c_i)^2 / (2 sigma^2)), normalised.
    """
    if grid is None:
        grid = BinGrid()
    if sigma is None:
        sigma = grid.width
    if not (np.isfinite(sigma) and sigma > 0.0):
        raise ConfigError("bad_sigma", f"sigma must be a positive number, got {sigma!r}")
    value = float(value)
    if not np.isfinite(value):
        raise DomainError("bad_value", f"motion score must be finite, got {value!r}")
    if value < grid.vmin or value > grid.vmax:
        warnings.warn(
            f"motion score {value:.4g} mm/s outside bin range "
            f"[{grid.vmin:g}, {grid.vmax:g}]; clamping",
            stacklevel=2,
        )
        value = min(max(value, grid.vmin), grid.vmax)
    z = (value - grid.centers) / sigma
    # subtract the max exponent first so extreme sigma cannot underflow
    # every bin to zero at once
    logp = -0.5 * z * z
    p = np.exp(logp - logp.max())
    return SoftLabel(p / p.sum())


def decode(p, grid: BinGrid | None = None) -> float:
    """Expected value of a bin distribution: sum of p_i times center_i."""
    if grid is None:
        grid = BinGrid()
    probs = _as_probabilities(p, grid.count, 1e-6)
    return float(probs @ grid.centers)


def kl_loss(target, pred) -> tuple[float, np.ndarray]:
    """KL divergence from prediction to target, with its logit gradient.

    Returns ``(loss, grad)`` where loss = sum t_i (log t_i - log p_i)
    (taking 0 log 0 = 0) and grad is with respect to the pre-softmax
    logits: simply p - t, which is what makes this head cheap to train.
    A zero predicted probability against nonzero target mass yields an
    infinite loss rather than an exception.
    """
    t = np.asarray(getattr(target, "probabilities", target), dtype=float)
    p = np.asarray(getattr(pred, "probabilities", pred), dtype=float)
    if t.shape != p.shape:
        raise DomainError("bad_probabilities", f"shape mismatch: {t.shape} vs {p.shape}")
    grad = p - t
    support = t > 0.0
    if np.any(p[support] == 0.0):
        return float("inf"), grad
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(support, t * (np.log(np.where(support, t, 1.0)) - np.log(p)), 0.0)
    return float(terms.sum()), grad


def mse_head_loss(value: float, predicted_value: float) -> tuple[float, float]:
    """Squared error and its gradient with respect to the prediction."""
    diff = float(predicted_value) - float(value)
    return diff * diff, 2.0 * diff
