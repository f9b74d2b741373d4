import numpy as np
import pytest

from headmotion import (
    BandSpec,
    ConfigError,
    DomainError,
    FilterCoefficients,
    RateSeries,
    SequenceWindow,
    band_targets,
    design_butterworth,
    zero_phase_filter,
)

FS = 30.0


def lstsq_amplitude(t, y, freq):
    """Amplitude of the ``freq`` component by least-squares projection.

    Immune to the FFT scalloping that a windowed periodogram would show
    for off-bin frequencies.
    """
    basis = np.column_stack([np.sin(2 * np.pi * freq * t), np.cos(2 * np.pi * freq * t)])
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    return float(np.hypot(*coef))


def test_lowpass_dc_gain_is_one():
    fc = design_butterworth(4, "lowpass", 0.1, FS)
    assert abs(fc.response(0.0, FS))[0] == pytest.approx(1.0, abs=1e-12)


def test_cutoff_gain_is_half_power():
    lp = design_butterworth(4, "lowpass", 0.1, FS)
    hp = design_butterworth(4, "highpass", 0.5, FS)
    bp = design_butterworth(4, "bandpass", (0.1, 0.5), FS)
    for fc, freqs in ((lp, [0.1]), (hp, [0.5]), (bp, [0.1, 0.5])):
        gains = np.abs(fc.response(freqs, FS))
        np.testing.assert_allclose(gains, 1.0 / np.sqrt(2.0), atol=1e-6)


def test_bandpass_passes_mid_band():
    bp = design_butterworth(4, "bandpass", (0.1, 0.5), FS)
    assert abs(bp.response(0.3, FS))[0] >= 0.99


def test_magnitude_monotone_through_transition():
    grid = np.linspace(0.0, FS / 2.0, 512, endpoint=False)
    lp = np.abs(design_butterworth(4, "lowpass", 0.1, FS).response(grid, FS))
    assert np.all(np.diff(lp) <= 1e-12)
    hp = np.abs(design_butterworth(4, "highpass", 0.5, FS).response(grid, FS))
    assert np.all(np.diff(hp) >= -1e-12)
    bp = np.abs(design_butterworth(4, "bandpass", (0.1, 0.5), FS).response(grid, FS))
    peak = int(np.argmax(bp))
    assert np.all(np.diff(bp[: peak + 1]) >= -1e-12)
    assert np.all(np.diff(bp[peak:]) <= 1e-12)


def test_designed_sections_are_stable():
    for kind, cut in (("lowpass", 0.1), ("highpass", 0.5), ("bandpass", (0.1, 0.5))):
        fc = design_butterworth(4, kind, cut, FS)
        for a1, a2 in fc.sections[:, 4:]:
            assert np.all(np.abs(np.roots([1.0, a1, a2])) < 1.0)


def test_unstable_sections_rejected():
    # pole at z = 2
    sos = np.array([[1.0, 0.0, 0.0, 1.0, -2.5, 1.0]])
    with pytest.raises(ConfigError) as err:
        FilterCoefficients(sections=sos)
    assert err.value.reason == "unstable_filter"


def test_cutoff_at_nyquist_rejected():
    with pytest.raises(ConfigError) as err:
        design_butterworth(4, "lowpass", 15.0, FS)
    assert err.value.reason == "bad_cutoff"
    with pytest.raises(ConfigError):
        design_butterworth(4, "bandpass", (0.5, 0.1), FS)
    with pytest.raises(ConfigError):
        design_butterworth(4, "lowpass", -0.1, FS)


def test_unknown_kind_rejected():
    with pytest.raises(ConfigError):
        design_butterworth(4, "bandstop", (0.1, 0.5), FS)


def test_band_spec_validation():
    with pytest.raises(ConfigError):
        BandSpec(low_cut=0.5, high_cut=0.1)
    with pytest.raises(ConfigError):
        BandSpec(high_cut=16.0, sample_rate=FS)
    with pytest.raises(ConfigError):
        BandSpec(order=0)


def test_constant_preserved_by_lowpass():
    fc = design_butterworth(4, "lowpass", 0.1, FS)
    x = np.full(3600, 2.7)
    np.testing.assert_allclose(zero_phase_filter(x, fc), 2.7, atol=1e-9)


def test_output_length_matches_input():
    fc = design_butterworth(4, "bandpass", (0.1, 0.5), FS)
    for n in (25, 100, 999):
        assert zero_phase_filter(np.random.default_rng(n).normal(size=n), fc).size == n


def test_sinusoid_amplitude_through_bandpass():
    fc = design_butterworth(4, "bandpass", (0.1, 0.5), FS)
    t = np.arange(int(120 * FS)) / FS
    x = np.sin(2 * np.pi * 0.3 * t)
    y = zero_phase_filter(x, fc)
    lo, hi = int(0.1 * t.size), int(0.9 * t.size)
    amp = lstsq_amplitude(t[lo:hi], y[lo:hi], 0.3)
    assert 0.98 <= amp <= 1.02


def test_zero_phase_lag_by_cross_correlation():
    fc = design_butterworth(4, "bandpass", (0.1, 0.5), FS)
    t = np.arange(int(120 * FS)) / FS
    x = np.sin(2 * np.pi * 0.3 * t)
    y = zero_phase_filter(x, fc)
    lo, hi = int(0.1 * t.size), int(0.9 * t.size)
    xc = np.correlate(y[lo:hi], x[lo:hi], mode="full")
    assert int(np.argmax(xc)) == x[lo:hi].size - 1  # lag zero


def test_short_series_rejected():
    fc = design_butterworth(4, "bandpass", (0.1, 0.5), FS)  # order 8, pad 24
    with pytest.raises(DomainError) as err:
        zero_phase_filter(np.zeros(24), fc)
    assert err.value.reason == "series_too_short"
    zero_phase_filter(np.zeros(25), fc)  # one more sample is enough


def test_time_reversal_symmetry():
    # Signal compactly supported away from the edges, so the slow filter
    # transients have fully decayed before they can reach either end.
    rng = np.random.default_rng(31)
    x = np.zeros(3 * 3600)
    x[3600:7200] = rng.normal(size=3600) * np.hanning(3600)
    for kind, cut in (("lowpass", 0.1), ("bandpass", (0.1, 0.5)), ("highpass", 0.5)):
        fc = design_butterworth(4, kind, cut, FS)
        forward = zero_phase_filter(x, fc)
        reflected = zero_phase_filter(x[::-1], fc)[::-1]
        np.testing.assert_allclose(reflected, forward, atol=1e-9)


def test_filtering_is_linear():
    rng = np.random.default_rng(77)
    x = rng.normal(size=3600)
    y = rng.normal(size=3600)
    for kind, cut in (("lowpass", 0.1), ("bandpass", (0.1, 0.5)), ("highpass", 0.5)):
        fc = design_butterworth(4, kind, cut, FS)
        mixed = zero_phase_filter(2.5 * x - 1.3 * y, fc)
        parts = 2.5 * zero_phase_filter(x, fc) - 1.3 * zero_phase_filter(y, fc)
        np.testing.assert_allclose(mixed, parts, atol=1e-9)


def rate_series(values):
    times = np.arange(values.size) / FS
    return RateSeries(times, values)


def test_constant_rate_goes_to_drift():
    series = rate_series(np.full(int(240 * FS), 0.8))
    bands = band_targets(series)
    assert bands.drift == pytest.approx(0.8, rel=0.05)
    assert bands.breathing <= 0.05 * 0.8
    assert bands.noisy <= 0.05 * 0.8


def test_breathing_component_lands_in_breathing_band():
    t = np.arange(int(240 * FS)) / FS
    values = 0.7 * np.sin(2 * np.pi * 0.25 * t)
    raw = np.mean(np.abs(values))
    bands = band_targets(RateSeries(t, values))
    assert bands.breathing >= 0.85 * raw
    assert bands.drift <= 0.15 * raw
    assert bands.noisy <= 0.15 * raw


def test_fast_jitter_lands_in_noisy_band():
    t = np.arange(int(240 * FS)) / FS
    values = 0.3 * np.sin(2 * np.pi * 2.0 * t)
    raw = np.mean(np.abs(values))
    bands = band_targets(RateSeries(t, values))
    assert bands.noisy >= 0.85 * raw
    assert bands.drift <= 0.15 * raw
    assert bands.breathing <= 0.15 * raw


def test_band_scores_are_nonnegative():
    rng = np.random.default_rng(6)
    series = rate_series(np.abs(rng.normal(size=2000)))
    bands = band_targets(series)
    assert all(b >= 0.0 for b in bands)


def test_irregular_sampling_rejected():
    rng = np.random.default_rng(2)
    times = np.arange(2000) / FS + rng.uniform(-0.02, 0.02, size=2000) / FS
    times.sort()
    with pytest.raises(DomainError) as err:
        band_targets(RateSeries(times, np.ones(2000)))
    assert err.value.reason == "irregular_sampling"


def test_small_jitter_tolerated():
    rng = np.random.default_rng(2)
    times = np.arange(2000) / FS + rng.uniform(-0.004, 0.004, size=2000) / FS
    times.sort()
    band_targets(RateSeries(times, np.ones(2000)))


def test_window_restricts_aggregation():
    t = np.arange(int(240 * FS)) / FS
    values = np.where(t < 120.0, 0.2, 1.0)
    window = SequenceWindow(start=150.0, end=230.0)
    bands = band_targets(RateSeries(t, values), window=window)
    # drift should reflect the plateau inside the window, not the global mean
    assert bands.drift == pytest.approx(1.0, rel=0.05)


def test_empty_window_rejected():
    series = rate_series(np.ones(1000))
    with pytest.raises(DomainError) as err:
        band_targets(series, window=SequenceWindow(start=500.0, end=600.0))
    assert err.value.reason == "empty_window"


def test_filtering_happens_before_windowing():
    # A step outside the window rings into a windowed band score only if
    # filtering sees the full series; verify the context is used.
    t = np.arange(int(240 * FS)) / FS
    values = np.where(t < 118.0, 0.0, 1.0)
    window = SequenceWindow(start=118.5, end=121.0)
    bands_full = band_targets(RateSeries(t, values), window=window)
    clipped = (t >= 110.0) & (t <= 130.0)
    bands_clip = band_targets(RateSeries(t[clipped], values[clipped]), window=window)
    assert bands_full.drift == pytest.approx(bands_clip.drift, rel=0.02)
