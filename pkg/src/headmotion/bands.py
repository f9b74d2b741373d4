"""Frequency-band decomposition of framewise motion-rate series.

Head motion during a scan is a mix of slow positional drift, periodic
displacement from breathing, and fast erratic movement.  This module
designs Butterworth filters around the 0.1 Hz / 0.5 Hz split, applies
them with zero phase lag, and aggregates windowed per-band scores that
keep the mm/s units of the input rates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import signal as _signal

from .errors import ConfigError, DomainError
from .rigid import RateSeries, SequenceWindow, select_window

__all__ = [
    "BandSpec",
    "FilterCoefficients",
    "MotionBands",
    "band_targets",
    "design_butterworth",
    "zero_phase_filter",
]

#: Relative timestamp jitter tolerated before a rate series is rejected
#: as non-uniformly sampled.
JITTER_TOL = 0.01

_KINDS = ("lowpass", "highpass", "bandpass")


@dataclass(frozen=True)
class BandSpec:
    """Cutoff frequencies (Hz) separating drift, breathing, and noisy motion.

    ``sample_rate`` may be left unset; :func:`band_targets` then infers it
    from the series timestamps.
    """

    low_cut: float = 0.1
    high_cut: float = 0.5
    order: int = 4
    sample_rate: float | None = None

    def __post_init__(self):
        if not isinstance(self.order, (int, np.integer)) or self.order < 1:
            raise ConfigError(
                "bad_order",
                f"filter order must be a positive integer, got {self.order!r}",
            )
        if not (0.0 < self.low_cut < self.high_cut):
            raise ConfigError(
                "bad_cutoff",
                f"need 0 < low_cut < high_cut, got {self.low_cut} and {self.high_cut}",
            )
        if self.sample_rate is not None and self.high_cut >= 0.5 * self.sample_rate:
            raise ConfigError(
                "bad_cutoff",
                f"high cutoff {self.high_cut} Hz is at or above the Nyquist "
                f"frequency {0.5 * self.sample_rate} Hz",
            )


@dataclass(frozen=True)
class FilterCoefficients:
    """A digital filter as a cascade of second-order sections.

    ``sections`` has one row ``(b0, b1, b2, 1, a1, a2)`` per section; the
    denominators are normalised so a0 = 1.  Every section must be stable
    (both poles strictly inside the unit circle).
    """

    sections: np.ndarray

    def __post_init__(self):
        sos = np.asarray(self.sections, dtype=float)
        if sos.ndim != 2 or sos.shape[1] != 6 or sos.shape[0] == 0:
            raise ConfigError(
                "bad_sections",
                f"expected an (n, 6) second-order-section array, got shape {sos.shape}",
            )
        if not np.all(np.isfinite(sos)):
            raise ConfigError("bad_sections", "filter coefficients must be finite")
        if not np.allclose(sos[:, 3], 1.0):
            raise ConfigError("bad_sections", "sections must be normalised to a0 = 1")
        for a1, a2 in sos[:, 4:]:
            if np.any(np.abs(np.roots([1.0, a1, a2])) >= 1.0):
                raise ConfigError(
                    "unstable_filter",
                    f"section (a1={a1}, a2={a2}) has a pole on or outside the unit circle",
                )
        object.__setattr__(self, "sections", sos)

    @property
    def order(self) -> int:
        """Effective filter order (two per section)."""
        return 2 * self.sections.shape[0]

    def response(self, freqs, sample_rate: float) -> np.ndarray:
        """Complex frequency response evaluated at ``freqs`` (Hz)."""
        _, h = _signal.sosfreqz(self.sections, worN=np.atleast_1d(freqs), fs=sample_rate)
        return h


class MotionBands(NamedTuple):
    """Windowed mean-absolute motion rate (mm/s) per frequency band."""

    drift: float
    breathing: float
    noisy: float


def design_butterworth(order: int, kind: str, cutoffs, sample_rate: float) -> FilterCoefficients:
    """Design a digital Butterworth filter as second-order sections.

    The design goes through the analog prototype and the bilinear
    transform with frequency pre-warping, so the magnitude response is
    exactly 1/sqrt(2) at each cutoff.

    Parameters
    ----------
    order : int
        Prototype order.  A bandpass of prototype order n has effective
        order 2n.
    kind : {"lowpass", "highpass", "bandpass"}
    cutoffs : float or pair of floats
        Cutoff frequency in Hz; a (low, high) pair for ``bandpass``.
    sample_rate : float
        Sampling frequency in Hz.
    """
    if kind not in _KINDS:
        raise ConfigError("bad_kind", f"kind must be one of {_KINDS}, got {kind!r}")
    if not isinstance(order, (int, np.integer)) or order < 1:
        raise ConfigError("bad_order", f"filter order must be a positive integer, got {order!r}")
    if not (np.isfinite(sample_rate) and sample_rate > 0):
        raise ConfigError("bad_sample_rate", f"sample rate must be positive, got {sample_rate!r}")
    cut = np.atleast_1d(np.asarray(cutoffs, dtype=float))
    expected = 2 if kind == "bandpass" else 1
    if cut.shape != (expected,):
        raise ConfigError(
            "bad_cutoff",
            f"{kind} needs {expected} cutoff value(s), got {cutoffs!r}",
        )
    nyquist = 0.5 * sample_rate
    if np.any(cut <= 0.0) or np.any(cut >= nyquist):
        raise ConfigError(
            "bad_cutoff",
            f"cutoffs must lie strictly between 0 and the Nyquist frequency "
            f"{nyquist} Hz, got {cut.tolist()}",
        )
    if kind == "bandpass" and not cut[0] < cut[1]:
        raise ConfigError("bad_cutoff", f"bandpass cutoffs must increase, got {cut.tolist()}")
    arg = (cut[0], cut[1]) if kind == "bandpass" else cut[0]
    sos = _signal.butter(int(order), arg, btype=kind, fs=sample_rate, output="sos")
    return FilterCoefficients(sections=sos)


def zero_phase_filter(series, coeffs: FilterCoefficients) -> np.ndarray:
    """Apply a filter forward and backward so the net phase lag is zero.

    The input is reflect-padded by three times the filter order at both
    ends, filtered forward, reversed, filtered again, reversed, and the
    padding trimmed; the output has the same length as the input.  Each
    pass starts from the filter's step-response steady state scaled by
    its first sample, which keeps constants exactly constant instead of
    ramping up from zero over the (long, for narrow filters) transient.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise DomainError("bad_series", f"series must be one-dimensional, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("bad_series", "series contains non-finite values")
    pad = 3 * coeffs.order
    if x.size <= pad:
        raise DomainError(
            "series_too_short",
            f"zero-phase filtering at order {coeffs.order} needs more than "
            f"{pad} samples, got {x.size}",
        )
    sos = coeffs.sections
    zi = _signal.sosfilt_zi(sos)
    ext = np.pad(x, pad, mode="reflect")
    out, _ = _signal.sosfilt(sos, ext, zi=zi * ext[0])
    out = out[::-1]
    out, _ = _signal.sosfilt(sos, out, zi=zi * out[0])
    out = out[::-1]
    return out[pad:-pad]


def band_targets(series: RateSeries, spec: BandSpec | None = None,
                 window: SequenceWindow | None = None) -> MotionBands:
    """Split a framewise rate series into drift / breathing / noisy scores.

    The full series is filtered into the three bands (lowpass below
    ``low_cut``, bandpass between the cutoffs, highpass above
    ``high_cut``), each filtered series is restricted to ``window``, and
    the windowed values are aggregated as a mean absolute value.
    Filtering before windowing lets samples outside the window provide
    context, so band edges do not ring into the scored interval.
    """
    if spec is None:
        spec = BandSpec()
    times = np.asarray(series.times, dtype=float)
    values = np.asarray(series.values, dtype=float)
    if times.ndim != 1 or times.shape != values.shape:
        raise DomainError(
            "bad_series",
            f"times and values must be matching one-dimensional arrays, got "
            f"{times.shape} and {values.shape}",
        )
    if times.size < 2:
        raise DomainError("too_few_samples", "band targets need at least two samples")
    steps = np.diff(times)
    step = float(np.median(steps))
    if step <= 0.0:
        raise DomainError("degenerate_interval", "timestamps must increase")
    if np.max(np.abs(steps - step)) > JITTER_TOL * step:
        raise DomainError(
            "irregular_sampling",
            f"timestamp jitter exceeds {JITTER_TOL:.0%} of the median step "
            f"{step:.6g} s; resample before band splitting",
        )
    fs = spec.sample_rate if spec.sample_rate is not None else 1.0 / step
    filters = (
        design_butterworth(spec.order, "lowpass", spec.low_cut, fs),
        design_butterworth(spec.order, "bandpass", (spec.low_cut, spec.high_cut), fs),
        design_butterworth(spec.order, "highpass", spec.high_cut, fs),
    )
    scores = []
    for coeffs in filters:
        filtered = zero_phase_filter(values, coeffs)
        if window is not None:
            kept = select_window(RateSeries(times, filtered), window).values
        else:
            kept = filtered
        if kept.size == 0:
            raise DomainError("empty_window", "no samples fall inside the band window")
        scores.append(float(np.mean(np.abs(kept))))
    return MotionBands(*scores)
