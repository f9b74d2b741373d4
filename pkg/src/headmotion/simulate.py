"""Synthetic ground truth: phantoms, motion trajectories, k-space corruption.

Real paired camera/scanner data is private, so validation runs on a
desk-scale substitute: head-like phantoms, trajectories with drift,
breathing, and jitter components, and segmented k-space resampling that
turns pose inconsistency into the familiar ghosting artifacts.  Labels
come from the synthesized trajectory through the very same scoring code
used for real tracking logs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage as _ndimage

from .bands import BandSpec, band_targets
from .errors import ConfigError, DomainError
from .io import (
    DatasetManifest,
    ManifestEntry,
    Volume,
    read_tracking_log,
    write_manifest,
    write_nifti,
    write_tracking_log,
)
from .rigid import (
    SequenceWindow,
    Trajectory,
    framewise_differences,
    motion_score,
    select_window,
)

__all__ = [
    "ReadoutSchedule",
    "TrajectorySpec",
    "build_dataset",
    "corrupt_kspace",
    "make_phantom",
    "synth_trajectory",
]


def _axis_triplet(value, name: str) -> tuple:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,):
        raise ConfigError("bad_spec", f"{name} must be a 3-vector, got {value!r}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError("bad_spec", f"{name} must be finite, got {value!r}")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class TrajectorySpec:
    """Parameters of a synthetic head trajectory.

    Translations are per-axis in mm; the rotation analogs are Euler
    angles in degrees about the same axes.  Breathing is sinusoidal at a
    physiological frequency, drift is linear in time, and jitter is
    white Gaussian noise on every sample.
    """

    duration: float
    rate: float = 30.0
    drift_rate: tuple = (0.0, 0.0, 0.0)
    breathing_amplitude: tuple = (0.0, 0.0, 0.0)
    breathing_frequency: float = 0.25
    jitter_sd: float = 0.0
    rotation_drift_rate: tuple = (0.0, 0.0, 0.0)
    rotation_breathing_amplitude: tuple = (0.0, 0.0, 0.0)
    rotation_jitter_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.duration) and self.duration > 0.0):
            raise ConfigError("bad_spec", f"duration must be positive, got {self.duration!r}")
        if not 0.1 <= self.breathing_frequency <= 0.5:
            raise ConfigError(
                "bad_spec",
                f"breathing frequency must lie in [0.1, 0.5] Hz, got {self.breathing_frequency!r}",
            )
        if self.rate <= 2.0 * self.breathing_frequency:
            raise ConfigError(
                "bad_spec",
                f"sampling rate {self.rate!r} Hz cannot resolve breathing at "
                f"{self.breathing_frequency!r} Hz",
            )
        if self.jitter_sd < 0.0 or self.rotation_jitter_sd < 0.0:
            raise ConfigError("bad_spec", "jitter standard deviations must be nonnegative")
        for name in ("drift_rate", "breathing_amplitude", "rotation_drift_rate",
                     "rotation_breathing_amplitude"):
            object.__setattr__(self, name, _axis_triplet(getattr(self, name), name))


@dataclass(frozen=True)
class ReadoutSchedule:
    """Acquisition times of contiguous k-space segments along one axis."""

    times: np.ndarray
    phase_axis: int = 1

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 1 or not np.all(np.isfinite(times)):
            raise ConfigError("bad_schedule", "segment times must be a non-empty finite vector")
        if self.phase_axis not in (0, 1, 2):
            raise ConfigError("bad_schedule", f"phase axis must be 0, 1, or 2, got {self.phase_axis!r}")
        object.__setattr__(self, "times", times)

    @property
    def segments(self) -> int:
        return int(self.times.size)

    @classmethod
    def uniform(cls, segments: int, duration: float, phase_axis: int = 1) -> "ReadoutSchedule":
        """Segments acquired at evenly spaced midpoints of the scan."""
        if segments < 1:
            raise ConfigError("bad_schedule", f"need at least one segment, got {segments}")
        times = (np.arange(segments) + 0.5) * (float(duration) / segments)
        return cls(times=times, phase_axis=phase_axis)


def make_phantom(dims=(32, 32, 32), voxel_size=(1.0, 1.0, 1.0), seed: int = 0) -> Volume:
    """Deterministic head-like phantom: nested ellipsoids, texture, noise.

    Geometry and tissue brightness vary a little from seed to seed — the
    head scales as a whole, the ventricle wanders, contrasts shift — so a
    sampled population does not share one template.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 16:
        raise ConfigError("bad_dims", f"phantom dims must be >= 16 per axis, got {dims}")
    rng = np.random.default_rng(seed)
    grids = [
        (np.arange(n, dtype=np.float64) - (n - 1) / 2.0) / (n / 2.0) for n in dims
    ]
    ux, uy, uz = np.meshgrid(*grids, indexing="ij")

    def inside(radii, center=(0.0, 0.0, 0.0)):
        return (
            ((ux - center[0]) / radii[0]) ** 2
            + ((uy - center[1]) / radii[1]) ** 2
            + ((uz - center[2]) / radii[2]) ** 2
        ) <= 1.0

    head_scale = rng.uniform(0.92, 1.02)
    squash = rng.uniform(0.96, 1.04, size=3)
    vent_center = np.array([0.0, 0.06, 0.10]) + rng.uniform(-0.04, 0.04, size=3)
    head = inside(head_scale * squash * np.array([0.92, 0.85, 0.88]))
    brain = inside(head_scale * squash * np.array([0.66, 0.60, 0.62]))
    ventricle = inside(
        head_scale * rng.uniform(0.8, 1.2) * np.array([0.16, 0.24, 0.18]),
        center=vent_center,
    )
    intensity = np.zeros(dims)
    intensity[head] = rng.uniform(380.0, 520.0)
    intensity[brain] = rng.uniform(1250.0, 1550.0)
    intensity[ventricle] = rng.uniform(580.0, 720.0)

    # smooth low-frequency texture: a few random-direction cosine waves
    texture = np.zeros(dims)
    for _ in range(3):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        cycles = rng.uniform(0.5, 1.5)
        texture += np.cos(
            2.0 * np.pi * cycles * (direction[0] * ux + direction[1] * uy + direction[2] * uz)
            + phase
        )
    intensity *= 1.0 + 0.08 * texture / 3.0
    noise_sd = rng.uniform(8.0, 16.0)
    intensity += rng.normal(0.0, noise_sd, size=dims) * (intensity > 0)
    data = np.clip(np.rint(intensity), 0, 65535).astype(np.uint16)
    return Volume(data=data, voxel_size=tuple(voxel_size), modality_tag="synthetic")


def synth_trajectory(spec: TrajectorySpec) -> Trajectory:
    """Sample the drift + breathing + jitter pose model at the given rate."""
    n = int(np.floor(spec.duration * spec.rate + 0.5)) + 1
    times = np.arange(n) / spec.rate
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 0]))
    wave = np.sin(2.0 * np.pi * spec.breathing_frequency * times)[:, None]

    trans = (
        times[:, None] * np.asarray(spec.drift_rate)
        + wave * np.asarray(spec.breathing_amplitude)
        + spec.jitter_sd * rng.standard_normal((n, 3))
    )
    angles = np.deg2rad(
        times[:, None] * np.asarray(spec.rotation_drift_rate)
        + wave * np.asarray(spec.rotation_breathing_amplitude)
        + spec.rotation_jitter_sd * rng.standard_normal((n, 3))
    )

    cx, sx = np.cos(angles[:, 0]), np.sin(angles[:, 0])
    cy, sy = np.cos(angles[:, 1]), np.sin(angles[:, 1])
    cz, sz = np.cos(angles[:, 2]), np.sin(angles[:, 2])
    zero = np.zeros(n)
    one = np.ones(n)
    rx = np.stack(
        [one, zero, zero, zero, cx, -sx, zero, sx, cx], axis=-1
    ).reshape(n, 3, 3)
    ry = np.stack(
        [cy, zero, sy, zero, one, zero, -sy, zero, cy], axis=-1
    ).reshape(n, 3, 3)
    rz = np.stack(
        [cz, -sz, zero, sz, cz, zero, zero, zero, one], axis=-1
    ).reshape(n, 3, 3)
    rotations = np.einsum("nij,njk,nkl->nil", rz, ry, rx)

    poses = np.zeros((n, 4, 4))
    poses[:, :3, :3] = rotations
    poses[:, :3, 3] = trans
    poses[:, 3, 3] = 1.0
    return Trajectory(times=times, poses=poses)


def _nearest_pose_indices(traj: Trajectory, times: np.ndarray) -> np.ndarray:
    right = np.searchsorted(traj.times, times)
    right = np.clip(right, 1, len(traj) - 1)
    left = right - 1
    pick_right = (traj.times[right] - times) <= (times - traj.times[left])
    return np.where(pick_right, right, left)


def corrupt_kspace(volume: Volume, traj: Trajectory, sched: ReadoutSchedule) -> Volume:
    """Splice per-segment k-space of the posed volume into one acquisition.

    Each segment's spectrum is the analytic transform of the posed
    object: translation enters exactly as a phase ramp, rotation as a
    rotation of the k-space sampling coordinates (trilinear interpolation,
    zero fill outside the sampled band).  Rotations act about the volume
    center.  Segments are contiguous blocks of the phase-encode axis in
    centered (fftshifted) order, mimicking sequential phase encoding.
    """
    if len(traj) < 1:
        raise DomainError("schedule_mismatch", "trajectory has no samples")
    t0, t1 = float(traj.times[0]), float(traj.times[-1])
    if np.any(sched.times < t0) or np.any(sched.times > t1):
        raise DomainError(
            "schedule_mismatch",
            f"segment times span [{sched.times.min():g}, {sched.times.max():g}] s "
            f"but the trajectory covers [{t0:g}, {t1:g}] s",
        )
    shape = volume.dims
    axis = sched.phase_axis
    if sched.segments > shape[axis]:
        raise DomainError(
            "schedule_mismatch",
            f"{sched.segments} segments cannot partition {shape[axis]} lines on axis {axis}",
        )

    voxel = np.asarray(volume.voxel_size)
    freqs = [np.fft.fftfreq(n, d=dv) for n, dv in zip(shape, voxel)]
    spectrum = np.fft.fftn(volume.data.astype(np.float64))
    shifted = None  # lazily fftshifted copy for the rotation path
    center = (np.asarray(shape, dtype=np.float64) - 1.0) / 2.0 * voxel
    out = np.empty_like(spectrum)

    chunks = np.array_split(np.fft.fftshift(np.arange(shape[axis])), sched.segments)
    pose_idx = _nearest_pose_indices(traj, sched.times)
    for chunk, pi in zip(chunks, pose_idx):
        pose = traj.poses[pi]
        rot = pose[:3, :3]
        t_eff = pose[:3, 3] + center - rot @ center
        axis_freqs = [f.copy() for f in freqs]
        axis_freqs[axis] = freqs[axis][chunk]
        kx, ky, kz = np.meshgrid(*axis_freqs, indexing="ij")
        if np.array_equal(rot, np.eye(3)):
            block = spectrum[_chunk_slicer(axis, chunk)]
        else:
            if shifted is None:
                shifted = np.fft.fftshift(spectrum)
            rotated = np.einsum(
                "ab,bxyz->axyz", rot.T, np.stack([kx, ky, kz])
            )
            coords = [
                rotated[a] * (shape[a] * voxel[a]) + shape[a] // 2 for a in range(3)
            ]
            real = _ndimage.map_coordinates(shifted.real, coords, order=1, mode="constant")
            imag = _ndimage.map_coordinates(shifted.imag, coords, order=1, mode="constant")
            block = real + 1j * imag
        phase = np.exp(-2j * np.pi * (kx * t_eff[0] + ky * t_eff[1] + kz * t_eff[2]))
        out[_chunk_slicer(axis, chunk)] = block * phase

    image = np.abs(np.fft.ifftn(out))
    return volume.with_data(np.clip(np.rint(image), 0, 65535).astype(np.uint16))


def _chunk_slicer(axis: int, chunk: np.ndarray):
    slicer = [slice(None)] * 3
    slicer[axis] = chunk
    return tuple(slicer)


def _interleaved_splits(counts) -> list:
    """Deterministic largest-deficit interleave of split labels."""
    names = ("train", "validation", "test")
    counts = [int(c) for c in counts]
    total = sum(counts)
    assigned = [0, 0, 0]
    labels = []
    for i in range(total):
        deficits = [
            counts[j] * (i + 1) / total - assigned[j] if assigned[j] < counts[j] else -np.inf
            for j in range(3)
        ]
        j = int(np.argmax(deficits))
        assigned[j] += 1
        labels.append(names[j])
    return labels


def build_dataset(
    n: int,
    out_dir,
    dims=(32, 32, 32),
    seed: int = 0,
    max_score: float = 1.5,
    split_counts=None,
    segments: int = 32,
) -> DatasetManifest:
    """Generate n corrupted phantoms with exact labels and a manifest.

    Target motion scores are spread approximately uniformly over
    (0, max_score] mm/s; each item writes a corrupted volume, its head
    mask sidecar (``<stem>.mask.nii.gz``), and the tracking log.  Labels
    in the manifest are recomputed from the log file exactly as a real
    log would be scored, so manifest and files can never disagree.
    Splits interleave across the score range at the requested counts
    (default 70/15/15).
    """
    if n < 2:
        raise ConfigError("bad_dataset", f"need at least 2 items, got {n}")
    if split_counts is None:
        n_train = int(round(0.70 * n))
        n_val = int(round(0.15 * n))
        split_counts = (n_train, n_val, n - n_train - n_val)
    if sum(int(c) for c in split_counts) != n or min(int(c) for c in split_counts) < 0:
        raise ConfigError(
            "bad_dataset", f"split counts {split_counts!r} do not partition {n} items"
        )

    out_dir = str(out_dir)
    vol_dir = os.path.join(out_dir, "volumes")
    log_dir = os.path.join(out_dir, "logs")
    os.makedirs(vol_dir, exist_ok=True)
    os.makedirs(log_dir, exist_ok=True)

    duration = 48.0
    window = SequenceWindow(start=4.0, end=44.0)
    band_spec = BandSpec()
    levels = np.linspace(0.02, max_score, n)
    splits = _interleaved_splits(split_counts)
    age_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 424242]))

    entries = []
    for i in range(n):
        item_seed = np.random.SeedSequence([int(seed), i])
        phantom_seed, traj_seed, mix_seed = (int(s) for s in item_seed.generate_state(3))
        phantom = make_phantom(dims=dims, seed=phantom_seed)

        # every subject moves differently: redraw the share of each motion
        # channel and its direction, so one target score can come from a
        # drift-heavy settling, a breathing sway, fidgeting, or any blend —
        # the image alone has to disentangle it
        mix_rng = np.random.default_rng(mix_seed)
        share = mix_rng.uniform(0.05, 1.0, size=6)
        axes = mix_rng.uniform(0.1, 1.0, size=(4, 3))
        breathing_hz = float(mix_rng.uniform(0.12, 0.45))

        def spec_for(scale):
            # base weights keep the image-visible components (drift,
            # breathing) carrying a substantial share of the score,
            # not just fast jitter
            return TrajectorySpec(
                duration=duration,
                drift_rate=tuple(0.017 * scale * share[0] * axes[0]),
                breathing_amplitude=tuple(0.17 * scale * share[1] * axes[1]),
                breathing_frequency=breathing_hz,
                jitter_sd=0.002 * scale * share[2],
                rotation_drift_rate=tuple(0.008 * scale * share[3] * axes[2]),
                rotation_breathing_amplitude=tuple(0.03 * scale * share[4] * axes[3]),
                rotation_jitter_sd=0.001 * scale * share[5],
                seed=traj_seed,
            )

        probe = synth_trajectory(spec_for(1.0))
        probe_score = motion_score(select_window(framewise_differences(probe), window))
        traj = synth_trajectory(spec_for(levels[i] / probe_score))

        sched = ReadoutSchedule.uniform(min(segments, dims[1]), duration)
        corrupted = corrupt_kspace(phantom, traj, sched)
        # scanner thermal noise, independent of motion: it rides on top of
        # the reconstruction and blurs the line between a quiet scan and a
        # mildly corrupted one
        scan_noise = mix_rng.uniform(10.0, 30.0)
        noisy_data = corrupted.data + mix_rng.normal(0.0, scan_noise, size=dims)
        corrupted = corrupted.with_data(
            np.clip(np.rint(noisy_data), 0, 65535).astype(np.uint16)
        )

        stem = f"{i:03d}"
        vol_path = os.path.join("volumes", f"vol_{stem}.nii.gz")
        mask_path = os.path.join("volumes", f"vol_{stem}.mask.nii.gz")
        log_path = os.path.join("logs", f"log_{stem}.csv")
        write_nifti(corrupted, os.path.join(out_dir, vol_path))
        head_mask = phantom.with_data((phantom.data > 0).astype(np.uint16))
        write_nifti(head_mask, os.path.join(out_dir, mask_path))
        write_tracking_log(traj, os.path.join(out_dir, log_path))

        # labels from the written file, through the real-log code path
        reread = read_tracking_log(os.path.join(out_dir, log_path))
        rates = framewise_differences(reread)
        score = motion_score(select_window(rates, window))
        bands = band_targets(rates, band_spec, window)
        age = 20.0 + 45.0 * score / max_score + float(age_rng.normal(0.0, 2.0))

        entries.append(
            ManifestEntry(
                volume_path=vol_path,
                log_path=log_path,
                window=window,
                motion_score=score,
                drift=bands.drift,
                breathing=bands.breathing,
                noisy=bands.noisy,
                covariates={"age": age},
                split=splits[i],
            )
        )

    manifest = DatasetManifest(tuple(entries))
    write_manifest(manifest, os.path.join(out_dir, "manifest.csv"))
    return manifest
