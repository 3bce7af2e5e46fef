"""
Tests for the synthetic hand/eye generator and its drift model
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from run_config import SimulationConfig
from services.errors import InsufficientRotation, OutOfDomain, SpanTooShort
from services.linear_calibration import build_pairs
from services.screw_algebra import dq_conjugate_arrays, dq_from_rt_arrays, dq_multiply_arrays, dq_to_rt_arrays
from services.synthetic_generator import (
    PRESETS,
    NoiseLevels,
    build_motion_model,
    generate_bundle,
    inject_drift,
    inject_outlier_pairs,
    relative_motion_scalars,
    sample_hand_eye,
    simulation_from_config,
)
from services.trajectory_io import Trajectory, align_to_grid


def test_same_seed_same_bundle():
    first = generate_bundle(level=3, seed=11, duration=12.0)
    second = generate_bundle(level=3, seed=11, duration=12.0)
    assert first.dt_gt == second.dt_gt
    assert np.array_equal(first.eye_noisy.translations, second.eye_noisy.translations)
    assert np.array_equal(first.extrinsic_gt.as_array(), second.extrinsic_gt.as_array())


def test_seeds_draw_different_truths():
    a = generate_bundle(seed=1, duration=12.0)
    b = generate_bundle(seed=2, duration=12.0)
    assert a.dt_gt != b.dt_gt
    assert abs(a.dt_gt) <= 2.0


def test_level_zero_leaves_the_eye_clean(clean_bundle):
    assert clean_bundle.eye_noisy is clean_bundle.eye_clean
    assert clean_bundle.noise.level == 0


def test_noise_levels_scale_linearly():
    noise = NoiseLevels(4)
    assert noise.trans_sigma == pytest.approx(2e-3)
    assert noise.rot_sigma == pytest.approx(0.08)
    with pytest.raises(ValueError):
        NoiseLevels(11)


def test_eye_poses_follow_the_model_chain(clean_bundle):
    """eye(t_e) = G * model(t_e + dt) * X"""
    bundle = clean_bundle
    eye = bundle.eye_clean
    rotations, translations = bundle.model.evaluate(eye.times[:5] + bundle.dt_gt)
    expected = dq_multiply_arrays(
        dq_multiply_arrays(bundle.global_offset.as_array(), dq_from_rt_arrays(rotations, translations)),
        bundle.extrinsic_gt.as_array(),
    )
    q, t = dq_to_rt_arrays(expected)
    assert_allclose(eye.translations[:5], t, atol=1e-12)
    assert_allclose(np.abs(np.sum(eye.rotations[:5] * q, axis=1)), 1.0, atol=1e-12)


def test_drift_is_a_right_composed_random_walk():
    bundle = generate_bundle(level=1, seed=5, duration=30.0)
    clean = bundle.eye_clean.dual_quaternions()
    noisy = bundle.eye_noisy.dual_quaternions()
    drift = dq_multiply_arrays(dq_conjugate_arrays(clean), noisy)
    _, drift_t = dq_to_rt_arrays(drift)
    assert_allclose(drift_t[0], 0.0, atol=1e-15)
    # Each step adds one gaussian translation of sigma 0.5 mm per axis
    steps = np.linalg.norm(np.diff(drift_t, axis=0), axis=1)
    assert np.sqrt(np.mean(steps ** 2)) == pytest.approx(0.5e-3 * np.sqrt(3.0), rel=0.1)


def test_hand_and_eye_relative_motions_share_scalar_parts(clean_bundle):
    hand, eye = align_to_grid(clean_bundle.hand, clean_bundle.eye_clean, clean_bundle.dt_gt)
    i = np.arange(0, len(eye) - 10, 7)
    j = i + 10
    assert_allclose(relative_motion_scalars(hand, i, j), relative_motion_scalars(eye, i, j), atol=1e-9)


@pytest.mark.parametrize("preset", PRESETS)
def test_presets_build_excited_models(preset):
    model = build_motion_model(preset=preset, duration=12.0, seed=0)
    lo, hi = model.domain
    assert lo == 0.0
    assert hi >= 12.0


def test_unknown_preset_is_rejected():
    with pytest.raises(ValueError):
        build_motion_model(preset="circle")


def test_static_seed_trajectory_cannot_excite_rotation():
    times = np.arange(0.0, 20.0, 0.1)
    n = len(times)
    still = Trajectory(times, np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)), np.column_stack([times, np.zeros((n, 2))]))
    with pytest.raises(InsufficientRotation):
        build_motion_model(seed_traj=still)


def test_short_seed_trajectory_is_rejected(short_clean_bundle):
    hand = short_clean_bundle.hand
    with pytest.raises(SpanTooShort):
        build_motion_model(seed_traj=hand.subset(hand.times < 5.0))


def test_offset_beyond_the_model_span_is_refused(short_clean_bundle):
    with pytest.raises(OutOfDomain):
        sample_hand_eye(short_clean_bundle.model, short_clean_bundle.extrinsic_gt, dt=20.0)


def test_eye_phase_is_drawn_within_one_eye_period():
    phases = {generate_bundle(seed=seed, duration=12.0).eye_phase for seed in range(4)}
    assert len(phases) == 4
    assert all(0.0 <= phase < 1.0 / 20.0 for phase in phases)
    bundle = generate_bundle(seed=2, duration=12.0, eye_phase=0.02)
    assert bundle.metadata()["eye_phase"] == 0.02
    lattice = (bundle.eye_clean.times + bundle.dt_gt - bundle.hand.times[0]) * 20.0
    assert_allclose(lattice - np.floor(lattice), 0.4, atol=1e-9)


def test_eye_phase_does_not_change_the_drawn_truth():
    locked = generate_bundle(seed=6, duration=12.0, eye_phase=0.0)
    drawn = generate_bundle(seed=6, duration=12.0)
    assert locked.dt_gt == drawn.dt_gt
    assert np.array_equal(locked.extrinsic_gt.as_array(), drawn.extrinsic_gt.as_array())


@pytest.mark.parametrize("phase", [-0.01, 0.05])
def test_eye_phase_outside_the_period_is_rejected(short_clean_bundle, phase):
    with pytest.raises(ValueError):
        sample_hand_eye(short_clean_bundle.model, short_clean_bundle.extrinsic_gt, dt=0.3, eye_phase=phase)


def test_simulation_config_passes_through():
    bundle = simulation_from_config(SimulationConfig(level=2, seed=9, duration=12.0, dt=0.25))
    assert bundle.dt_gt == 0.25
    assert bundle.metadata()["noise_level"] == 2
    assert bundle.metadata()["noise_seed"] == 9
    assert bundle.eye_noisy.native_rate == pytest.approx(20.0)
    assert bundle.hand.native_rate == pytest.approx(100.0)


def test_outlier_injection_is_seeded(clean_bundle):
    hand, eye = align_to_grid(clean_bundle.hand, clean_bundle.eye_clean, clean_bundle.dt_gt)
    pairs = build_pairs(hand, eye)
    first, chosen = inject_outlier_pairs(pairs, 0.2, rng_seed=3)
    second, again = inject_outlier_pairs(pairs, 0.2, rng_seed=3)
    assert len(chosen) == round(0.2 * len(pairs))
    assert np.array_equal(chosen, again)
    assert all(first[k].eye_rel != pairs[k].eye_rel for k in chosen)
    assert all(first[k] is pairs[k] for k in range(len(pairs)) if k not in set(chosen.tolist()))


def test_drift_is_reproducible_and_starts_at_the_first_pose(clean_bundle):
    eye = clean_bundle.eye_clean
    first = inject_drift(eye, NoiseLevels(5, rng_seed=4))
    assert np.array_equal(first.translations, inject_drift(eye, NoiseLevels(5, rng_seed=4)).translations)
    assert not np.array_equal(first.translations, inject_drift(eye, NoiseLevels(5, rng_seed=8)).translations)
    assert_allclose(first.translations[0], eye.translations[0], atol=1e-15)
    assert inject_drift(eye, NoiseLevels(0)) is eye
