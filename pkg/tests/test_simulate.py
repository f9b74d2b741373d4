"""Tests for synthetic phantoms, trajectories, and k-space corruption."""

import os

import numpy as np
import pytest

from headmotion.bands import BandSpec, band_targets
from headmotion.errors import ConfigError, DomainError
from headmotion.io import read_manifest, read_nifti, read_tracking_log
from headmotion.metrics import aes
from headmotion.rigid import (
    SequenceWindow,
    Trajectory,
    framewise_differences,
    motion_score,
    select_window,
)
from headmotion.simulate import (
    ReadoutSchedule,
    TrajectorySpec,
    build_dataset,
    corrupt_kspace,
    make_phantom,
    synth_trajectory,
)


def static_trajectory(pose, t_end=1.0):
    return Trajectory(times=np.array([0.0, t_end]), poses=np.stack([pose, pose]))


# ---------------------------------------------------------------- phantom


def test_phantom_basic_properties():
    vol = make_phantom(dims=(24, 28, 26), seed=0)
    assert vol.data.dtype == np.uint16
    assert vol.dims == (24, 28, 26)
    frac = float((vol.data > 0).mean())
    assert 0.2 < frac < 0.8, f"head fills {frac:.2f} of the field"
    # the dominant tissue class has to be brighter than the skull shell
    assert np.percentile(vol.data[vol.data > 0], 75) > 1000


def test_phantom_deterministic_and_seed_sensitive():
    a = make_phantom(seed=4)
    b = make_phantom(seed=4)
    c = make_phantom(seed=5)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_phantom_rejects_tiny_dims():
    with pytest.raises(ConfigError) as err:
        make_phantom(dims=(8, 32, 32))
    assert err.value.reason == "bad_dims"


# ------------------------------------------------------------- trajectory


def test_spec_validation():
    with pytest.raises(ConfigError):
        TrajectorySpec(duration=0.0)
    with pytest.raises(ConfigError):
        TrajectorySpec(duration=10.0, breathing_frequency=0.05)
    with pytest.raises(ConfigError):
        TrajectorySpec(duration=10.0, breathing_frequency=0.5, rate=0.8)
    with pytest.raises(ConfigError):
        TrajectorySpec(duration=10.0, jitter_sd=-1.0)
    with pytest.raises(ConfigError):
        TrajectorySpec(duration=10.0, drift_rate=(1.0, 2.0))


def test_trajectory_deterministic():
    spec = TrajectorySpec(duration=5.0, jitter_sd=0.1, rotation_jitter_sd=0.05, seed=21)
    a = synth_trajectory(spec)
    b = synth_trajectory(spec)
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.poses, b.poses)
    c = synth_trajectory(TrajectorySpec(duration=5.0, jitter_sd=0.1,
                                        rotation_jitter_sd=0.05, seed=22))
    assert not np.array_equal(a.poses, c.poses)


def test_zero_spec_is_static():
    traj = synth_trajectory(TrajectorySpec(duration=3.0))
    assert np.allclose(traj.poses, np.eye(4), atol=0.0)
    rates = framewise_differences(traj)
    assert np.all(rates.values == 0.0)


def test_pure_drift_score_matches_rate():
    # constant-velocity translation: every framewise rate equals |v|
    spec = TrajectorySpec(duration=20.0, drift_rate=(0.02, 0.0, 0.0))
    rates = framewise_differences(synth_trajectory(spec))
    np.testing.assert_allclose(rates.values, 0.02, rtol=1e-9)
    assert motion_score(rates) == pytest.approx(0.02, rel=1e-9)


def test_band_separation_on_synthetic_motion():
    # drift dominates the velocity so the speed series keeps the sign of
    # each component: slow 1 mm/s trend plus a 0.25 Hz ripple whose
    # velocity amplitude is 2*pi*0.25*0.05 ~ 0.0785 mm/s
    spec = TrajectorySpec(duration=240.0, drift_rate=(1.0, 0.0, 0.0),
                          breathing_amplitude=(0.05, 0.0, 0.0))
    rates = framewise_differences(synth_trajectory(spec))
    bands = band_targets(rates, BandSpec(), SequenceWindow(10.0, 230.0))
    assert bands.drift == pytest.approx(1.0, rel=0.02)
    # mean |a sin| = 2a/pi with a = 0.0785 mm/s
    assert bands.breathing == pytest.approx(0.05, rel=0.05)
    assert bands.noisy < 0.005


def test_trajectory_rotation_matches_single_axis_oracle():
    spec = TrajectorySpec(duration=2.0, rotation_drift_rate=(0.0, 0.0, 9.0))
    traj = synth_trajectory(spec)
    theta = np.deg2rad(9.0 * traj.times[-1])
    expected = np.array([
        [np.cos(theta), -np.sin(theta), 0.0],
        [np.sin(theta), np.cos(theta), 0.0],
        [0.0, 0.0, 1.0],
    ])
    np.testing.assert_allclose(traj.poses[-1, :3, :3], expected, atol=1e-12)


# ---------------------------------------------------------------- schedule


def test_uniform_schedule_midpoints():
    sched = ReadoutSchedule.uniform(4, 8.0)
    np.testing.assert_allclose(sched.times, [1.0, 3.0, 5.0, 7.0])
    assert sched.segments == 4
    assert sched.phase_axis == 1


def test_schedule_validation():
    with pytest.raises(ConfigError):
        ReadoutSchedule.uniform(0, 8.0)
    with pytest.raises(ConfigError):
        ReadoutSchedule(times=np.array([1.0]), phase_axis=5)
    vol = make_phantom(dims=(16, 16, 16))
    traj = static_trajectory(np.eye(4), t_end=1.0)
    late = ReadoutSchedule(times=np.array([0.5, 2.0]))
    with pytest.raises(DomainError) as err:
        corrupt_kspace(vol, traj, late)
    assert err.value.reason == "schedule_mismatch"
    crowded = ReadoutSchedule(times=np.full(17, 0.5))
    with pytest.raises(DomainError):
        corrupt_kspace(vol, traj, crowded)


# -------------------------------------------------------------- corruption


def test_static_pose_round_trip_is_exact():
    vol = make_phantom(dims=(24, 24, 24), seed=3)
    out = corrupt_kspace(vol, static_trajectory(np.eye(4)), ReadoutSchedule.uniform(8, 1.0))
    assert np.array_equal(out.data, vol.data)


def test_integer_translation_matches_circular_shift():
    # constant whole-voxel translation is the DFT shift theorem exactly
    vol = make_phantom(dims=(24, 24, 24), seed=3)
    pose = np.eye(4)
    pose[:3, 3] = (3.0, 0.0, 0.0)
    out = corrupt_kspace(vol, static_trajectory(pose), ReadoutSchedule.uniform(8, 1.0))
    assert np.array_equal(out.data, np.roll(vol.data, 3, axis=0))


def test_quarter_turn_matches_rot90():
    # odd grid: a 90-degree in-plane rotation maps sample points onto
    # sample points, so the k-space route must reproduce rot90 exactly
    vol = make_phantom(dims=(25, 25, 25), seed=3)
    pose = np.eye(4)
    pose[:3, :3] = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    out = corrupt_kspace(vol, static_trajectory(pose), ReadoutSchedule.uniform(8, 1.0))
    assert np.array_equal(out.data, np.rot90(vol.data, 1, axes=(0, 1)))


def test_artifact_energy_grows_with_amplitude():
    vol = make_phantom(dims=(24, 24, 24), seed=3)
    sched = ReadoutSchedule.uniform(16, 8.0)
    energies = []
    for amp in (0.0, 0.5, 1.0, 2.0, 4.0):
        spec = TrajectorySpec(duration=8.0, breathing_amplitude=(0.0, amp, 0.0), seed=5)
        out = corrupt_kspace(vol, synth_trajectory(spec), sched)
        diff = out.data.astype(np.float64) - vol.data.astype(np.float64)
        energies.append(float((diff ** 2).sum()))
    assert energies[0] == 0.0
    for weak, strong in zip(energies, energies[1:]):
        assert strong > weak


def test_corruption_is_linear_in_intensity():
    vol = make_phantom(dims=(24, 24, 24), seed=3)
    doubled = vol.with_data((vol.data.astype(np.uint32) * 2).astype(np.uint16))
    spec = TrajectorySpec(duration=8.0, drift_rate=(0.1, 0.0, 0.0),
                          rotation_drift_rate=(0.0, 0.0, 0.5),
                          breathing_amplitude=(0.0, 0.5, 0.0), seed=9)
    traj = synth_trajectory(spec)
    sched = ReadoutSchedule.uniform(16, 8.0)
    once = corrupt_kspace(vol, traj, sched).data.astype(np.float64)
    twice = corrupt_kspace(doubled, traj, sched).data.astype(np.float64)
    # both outputs quantize independently, so allow two counts of slack
    assert np.abs(twice - 2.0 * once).max() <= 2.0


def test_corruption_lowers_edge_strength():
    vol = make_phantom(dims=(24, 24, 24), seed=3)
    spec = TrajectorySpec(duration=8.0, breathing_amplitude=(0.0, 4.0, 0.0),
                          jitter_sd=0.05, seed=7)
    out = corrupt_kspace(vol, synth_trajectory(spec), ReadoutSchedule.uniform(16, 8.0))
    assert aes(out) < 0.75 * aes(vol)


# ----------------------------------------------------------------- dataset


def test_build_dataset_files_and_labels(tmp_path):
    manifest = build_dataset(6, tmp_path, seed=11)
    assert len(manifest) == 6
    again = read_manifest(os.path.join(tmp_path, "manifest.csv"))
    assert [e.volume_path for e in again] == [e.volume_path for e in manifest]

    scores = [e.motion_score for e in manifest]
    assert scores == sorted(scores)
    assert scores[0] < 0.1 and scores[-1] > 1.2

    for entry in manifest:
        assert os.path.exists(os.path.join(tmp_path, entry.volume_path))
        assert os.path.exists(os.path.join(tmp_path, entry.log_path))
        mask = entry.volume_path.replace(".nii.gz", ".mask.nii.gz")
        assert os.path.exists(os.path.join(tmp_path, mask))
        assert "age" in entry.covariates

    # manifest labels must agree exactly with rescoring the written log
    entry = manifest.entries[3]
    traj = read_tracking_log(os.path.join(tmp_path, entry.log_path))
    rates = framewise_differences(traj)
    assert motion_score(select_window(rates, entry.window)) == entry.motion_score
    bands = band_targets(rates, BandSpec(), entry.window)
    assert (bands.drift, bands.breathing, bands.noisy) == (
        entry.drift, entry.breathing, entry.noisy)

    vol = read_nifti(os.path.join(tmp_path, entry.volume_path))
    assert vol.dims == (32, 32, 32)
    mask = read_nifti(os.path.join(tmp_path, entry.volume_path.replace(
        ".nii.gz", ".mask.nii.gz")))
    assert set(np.unique(mask.data)) <= {0, 1}


def test_build_dataset_deterministic(tmp_path):
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    man_a = build_dataset(3, a_dir, seed=2)
    man_b = build_dataset(3, b_dir, seed=2)
    assert [e.motion_score for e in man_a] == [e.motion_score for e in man_b]
    raw_a = (a_dir / man_a.entries[0].volume_path).read_bytes()
    raw_b = (b_dir / man_b.entries[0].volume_path).read_bytes()
    assert raw_a == raw_b


def test_build_dataset_split_counts(tmp_path):
    manifest = build_dataset(8, tmp_path, seed=1, split_counts=(4, 2, 2))
    splits = [e.split for e in manifest]
    assert splits.count("train") == 4
    assert splits.count("validation") == 2
    assert splits.count("test") == 2
    # each split should span the score range rather than pool at one end
    test_scores = [e.motion_score for e in manifest if e.split == "test"]
    assert max(test_scores) - min(test_scores) > 0.3


def test_build_dataset_validation(tmp_path):
    with pytest.raises(ConfigError):
        build_dataset(1, tmp_path)
    with pytest.raises(ConfigError):
        build_dataset(5, tmp_path, split_counts=(3, 1, 2))
