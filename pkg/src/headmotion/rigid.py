"""Rigid-transform geometry and per-sequence motion scoring.

Head poses come in as timestamped 4x4 homogeneous matrices (rotation in
direction cosines, translation in mm).  Consecutive poses are compared with
the spherical-head RMS displacement metric, divided by the inter-frame
interval to give a rate in mm/s, and averaged over an acquisition window to
give the scalar motion score.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ConfigError, DomainError, FormatError

RIGIDITY_TOL = 1e-6


@dataclass(frozen=True)
class RigidTransform:
    """A rigid head pose: 4x4 homogeneous matrix, translation in mm."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", m)
        _check_rigid(m)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(4))

    @classmethod
    def from_rotation_translation(cls, rotation, translation) -> "RigidTransform":
        m = np.eye(4)
        m[:3, :3] = np.asarray(rotation, dtype=float)
        m[:3, 3] = np.asarray(translation, dtype=float)
        return cls(m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform.from_rotation_translation(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self applied after other (matrix product self @ other)."""
        return RigidTransform(self.matrix @ other.matrix)


def _rigidity_error(matrix: np.ndarray) -> float:
    """Worst violation of the rigidity invariants for a stack of 4x4 matrices."""
    m = np.asarray(matrix, dtype=float)
    r = m[..., :3, :3]
    ortho = np.abs(r @ np.swapaxes(r, -1, -2) - np.eye(3))
    det = np.abs(np.linalg.det(r) - 1.0)
    return float(max(ortho.max(), det.max()))


def _check_rigid(matrix: np.ndarray, context: str = "transform") -> None:
    m = np.asarray(matrix, dtype=float)
    if m.shape[-2:] != (4, 4):
        raise FormatError("bad_shape", f"{context}: expected 4x4 matrix, got {m.shape}")
    if not np.isfinite(m).all():
        raise FormatError("non_finite", f"{context}: non-finite entries")
    last = m[..., 3, :]
    if not (last == np.array([0.0, 0.0, 0.0, 1.0])).all():
        raise FormatError("bad_last_row", f"{context}: last row must be (0,0,0,1)")
    err = _rigidity_error(m)
    if err > RIGIDITY_TOL:
        raise FormatError(
            "non_rigid",
            f"{context}: rotation block not orthonormal with det +1 "
            f"(violation {err:.3g} > {RIGIDITY_TOL:g})",
        )


@dataclass(frozen=True)
class Trajectory:
    """Timestamped rigid poses; timestamps in seconds, strictly increasing."""

    times: np.ndarray
    poses: np.ndarray  # (n, 4, 4)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.poses, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "poses", p)
        if t.ndim != 1 or p.shape != (t.size, 4, 4):
            raise FormatError(
                "bad_shape",
                f"trajectory needs times (n,) and poses (n,4,4); got {t.shape}, {p.shape}",
            )
        if t.size >= 2 and not (np.diff(t) > 0).all():
            raise FormatError(
                "non_monotonic_timestamps", "trajectory timestamps must strictly increase"
            )

    def __len__(self) -> int:
        return int(self.times.size)

    @classmethod
    def from_samples(cls, samples: Iterable[tuple[float, RigidTransform]]) -> "Trajectory":
        pairs = list(samples)
        times = np.array([t for t, _ in pairs], dtype=float)
        poses = np.stack([p.matrix for _, p in pairs]) if pairs else np.empty((0, 4, 4))
        return cls(times, poses)


@dataclass(frozen=True)
class JenkinsonParams:
    """Spherical head model: radius and center in mm."""

    sphere_radius: float = 80.0
    sphere_center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "sphere_center", np.asarray(self.sphere_center, dtype=float))
        if not self.sphere_radius > 0:
            raise ConfigError("bad_radius", f"sphere_radius must be > 0, got {self.sphere_radius}")


@dataclass(frozen=True)
class SequenceWindow:
    """Sequence extent in scanner time plus the camera-minus-scanner offset."""

    start: float
    end: float
    clock_offset: float = 0.0

    def __post_init__(self):
        if not self.end > self.start:
            raise ConfigError("bad_window", f"window end must exceed start ({self.start}, {self.end})")


class RateSeries(NamedTuple):
    """Framewise motion rates (mm/s), timestamped at the later frame of each pair."""

    times: np.ndarray
    values: np.ndarray


def jenkinson_difference(a: RigidTransform, b: RigidTransform, params: JenkinsonParams | None = None) -> float:
    """RMS displacement (mm) of points in a spherical head model between poses a and b.

    With M = b a^-1 - I and [A | t] the top 3x4 block of M,

        d = sqrt(R^2/5 * trace(A^T A) + |t + A c|^2)

    where R is the sphere radius and c its center.  Returns exactly 0.0 when
    the two matrices are equal.
    """
    if params is None:
        params = JenkinsonParams()
    _check_rigid(a.matrix, "first transform")
    _check_rigid(b.matrix, "second transform")
    if np.array_equal(a.matrix, b.matrix):
        return 0.0
    rel = b.matrix @ a.inverse().matrix
    am = rel[:3, :3] - np.eye(3)
    tv = rel[:3, 3] + am @ params.sphere_center
    r2 = params.sphere_radius**2
    return float(np.sqrt(r2 / 5.0 * np.sum(am * am) + tv @ tv))


def framewise_differences(traj: Trajectory, params: JenkinsonParams | None = None) -> RateSeries:
    """Per-pair displacement rates: jenkinson difference of consecutive poses over dt.

    The rate for pair (i-1, i) is stamped at t_i; the result has len(traj) - 1
    samples.
    """
    if params is None:
        params = JenkinsonParams()
    if len(traj) < 2:
        raise DomainError("too_few_samples", "need at least 2 samples to difference")
    _check_rigid(traj.poses, "trajectory poses")
    dt = np.diff(traj.times)
    if (dt <= 0).any():
        raise DomainError("degenerate_interval", "duplicate or decreasing timestamps")

    r = traj.poses[:, :3, :3]
    t = traj.poses[:, :3, 3]
    # relative transform of each consecutive pair: pose_i @ pose_{i-1}^-1
    r_prev_inv = np.swapaxes(r[:-1], -1, -2)
    rel_r = r[1:] @ r_prev_inv
    rel_t = t[1:] - np.einsum("nij,nj->ni", rel_r, t[:-1])

    am = rel_r - np.eye(3)
    tv = rel_t + np.einsum("nij,j->ni", am, params.sphere_center)
    d = np.sqrt(
        params.sphere_radius**2 / 5.0 * np.sum(am * am, axis=(1, 2)) + np.sum(tv * tv, axis=1)
    )
    # identical consecutive poses are exactly zero motion, not rounding noise
    same = np.all(traj.poses[1:] == traj.poses[:-1], axis=(1, 2))
    d[same] = 0.0
    return RateSeries(times=traj.times[1:].copy(), values=d / dt)


def select_window(series: RateSeries, window: SequenceWindow) -> RateSeries:
    """Samples whose camera timestamp minus the clock offset falls in [start, end]."""
    shifted = series.times - window.clock_offset
    keep = (shifted >= window.start) & (shifted <= window.end)
    return RateSeries(series.times[keep], series.values[keep])


def motion_score(series: RateSeries | np.ndarray) -> float:
    """Arithmetic mean rate in mm/s; rejects empty input."""
    values = series.values if isinstance(series, RateSeries) else np.asarray(series, dtype=float)
    if values.size == 0:
        raise DomainError("empty_window", "cannot average an empty rate series")
    return float(np.mean(values))
