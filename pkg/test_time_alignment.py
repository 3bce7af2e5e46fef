"""
Tests for angular-speed cross-correlation time alignment
"""

import numpy as np
import pytest

from services.errors import InsufficientOverlap, NoMotion, PeakAtBoundary, RateMismatch, SignalTooShort
from services.synthetic_generator import generate_bundle
from services.time_alignment import (
    AlignmentSettings,
    AngularSpeedSignal,
    angular_speed,
    cross_correlate,
    estimate_time_offset,
    refine_peak,
)
from services.trajectory_io import Trajectory


def smooth_signal(n, seed=0):
    rng = np.random.default_rng(seed)
    noise = rng.normal(size=n + 20)
    return np.convolve(noise, np.ones(5) / 5.0, mode="same")[10:n + 10] + 2.0


def test_cross_correlation_peaks_at_the_delay():
    """A copy delayed by k samples correlates best at lag k"""
    base = smooth_signal(300)
    a = AngularSpeedSignal(rate=20.0, values=base[20:220], t0=0.0)
    b = AngularSpeedSignal(rate=20.0, values=base[13:213], t0=0.0)
    result = cross_correlate(a, b)
    peak = int(np.argmax(np.where(result.valid, result.values, -np.inf)))
    assert result.lags[peak] == 7


def test_correlation_is_normalized_per_overlap():
    """An affine copy scores exactly one at lag zero and no lag exceeds one"""
    base = smooth_signal(200)
    a = AngularSpeedSignal(rate=20.0, values=base, t0=0.0)
    b = AngularSpeedSignal(rate=20.0, values=2.5 * base + 1.0, t0=0.0)
    result = cross_correlate(a, b)
    assert result.values[result.lags == 0][0] == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.abs(result.values) <= 1.0 + 1e-12)


def test_cross_correlation_requires_equal_rates():
    a = AngularSpeedSignal(rate=20.0, values=smooth_signal(50), t0=0.0)
    b = AngularSpeedSignal(rate=25.0, values=smooth_signal(50, 1), t0=0.0)
    with pytest.raises(RateMismatch):
        cross_correlate(a, b)


def test_cross_correlation_rejects_short_signals():
    a = AngularSpeedSignal(rate=20.0, values=np.arange(5.0), t0=0.0)
    with pytest.raises(SignalTooShort):
        cross_correlate(a, a)


def test_refine_peak_recovers_parabola_vertex():
    index = np.arange(11, dtype=float)
    corr = 1.0 - (index - 5.3) ** 2
    position, curvature_ok = refine_peak(corr, 5)
    assert curvature_ok
    assert position == pytest.approx(5.3, abs=1e-12)


def test_refine_peak_flat_neighbourhood_keeps_integer_lag():
    position, curvature_ok = refine_peak(np.ones(5), 2)
    assert position == 2.0
    assert not curvature_ok


@pytest.mark.parametrize("index", [0, 4])
def test_refine_peak_needs_both_neighbours(index):
    with pytest.raises(PeakAtBoundary):
        refine_peak(np.arange(5.0), index)


def test_angular_speed_of_constant_spin():
    n = 201
    times = np.arange(n) / 100.0
    angles = 0.8 * times
    rotations = np.stack([np.cos(angles / 2), np.zeros(n), np.zeros(n), np.sin(angles / 2)], axis=1)
    traj = Trajectory(times, rotations, np.zeros((n, 3)))
    signal = angular_speed(traj, 20.0)
    assert signal.rate == 20.0
    np.testing.assert_allclose(signal.values, 0.8, atol=1e-9)


def test_estimate_recovers_known_offset(clean_bundle):
    estimate = estimate_time_offset(clean_bundle.hand, clean_bundle.eye_noisy)
    assert estimate.reliable
    assert estimate.rate == pytest.approx(20.0)
    assert abs(estimate.dt - clean_bundle.dt_gt) < 5e-3


def test_unrefined_estimate_is_quantized(clean_bundle):
    estimate = estimate_time_offset(clean_bundle.hand, clean_bundle.eye_noisy, refine=False)
    assert not estimate.curvature_ok
    # One sample at 20 Hz is 50 ms; rounding to the nearest lag costs at most half of it
    assert abs(estimate.dt - clean_bundle.dt_gt) <= 0.025 + 5e-3


def test_static_trajectories_have_no_motion():
    n = 400
    times = np.arange(n) / 20.0
    still = Trajectory(times, np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)), np.zeros((n, 3)))
    with pytest.raises(NoMotion):
        estimate_time_offset(still, still)


def test_short_overlap_is_rejected(clean_bundle):
    settings = AlignmentSettings(min_overlap=1000.0)
    with pytest.raises(InsufficientOverlap):
        estimate_time_offset(clean_bundle.hand, clean_bundle.eye_noisy, settings)


@pytest.mark.parametrize("eye_phase", [0.01, 0.025, 0.04])
def test_fractional_sample_offsets_are_refined(eye_phase):
    bundle = generate_bundle(preset="figure8", level=0, seed=5, duration=20.0, eye_phase=eye_phase)
    fine = estimate_time_offset(bundle.hand, bundle.eye_noisy)
    assert fine.curvature_ok
    assert abs(fine.dt - bundle.dt_gt) < 5e-3


def test_swapping_the_trajectories_negates_the_offset(noisy_bundle):
    forward = estimate_time_offset(noisy_bundle.hand, noisy_bundle.eye_noisy)
    backward = estimate_time_offset(noisy_bundle.eye_noisy, noisy_bundle.hand)
    assert abs(forward.dt - noisy_bundle.dt_gt) < 5e-3
    assert backward.dt == pytest.approx(-forward.dt, abs=5e-3)


@pytest.mark.slow
def test_refined_alignment_beats_integer_lag_across_levels(mc_seeds):
    """Mean refined error stays within 5 ms and well below the quantized baseline"""
    refined, baseline = [], []
    for level in (0, 5, 10):
        for seed in range(mc_seeds):
            bundle = generate_bundle(preset="figure8", level=level, seed=100 + seed, duration=30.0)
            fine = estimate_time_offset(bundle.hand, bundle.eye_noisy)
            coarse = estimate_time_offset(bundle.hand, bundle.eye_noisy, refine=False)
            refined.append(abs(fine.dt - bundle.dt_gt))
            baseline.append(abs(coarse.dt - bundle.dt_gt))
        assert np.mean(refined[-mc_seeds:]) <= 5e-3
    assert np.mean(baseline) <= 0.03
    assert np.mean(refined) <= np.mean(baseline) / 5.0
