"""
Tests for pair construction, the screw-consistency kernel and the RANSAC solvers
"""

import numpy as np
import pytest

from services.errors import IllConditioned, NoPairs
from services.evaluation_metrics import extrinsic_error
from services.linear_calibration import (
    LinearSystem,
    RansacSettings,
    RelativePosePair,
    build_pairs,
    build_relative_pairs,
    calibrate_pairs,
    coefficient_block,
    coefficient_blocks,
    pair_arrays,
    pair_diagnostics,
    ransac_calibrate,
    robust_weight,
    screw_consistency_E,
    solve_dq_svd,
)
from services.screw_algebra import DualQuat, dq_conjugate_arrays, dq_from_rt_arrays, dq_multiply_arrays, quat_exp
from services.synthetic_generator import generate_bundle, inject_outlier_pairs, random_extrinsic
from services.trajectory_io import Trajectory, align_to_grid


def exact_grid(bundle, noisy=False):
    """Hand poses evaluated on the spline at the eye instants, index-aligned with the (clean) eye."""
    eye = bundle.eye_noisy if noisy else bundle.eye_clean
    rotations, translations = bundle.model.evaluate(eye.times + bundle.dt_gt)
    hand = Trajectory(eye.times + bundle.dt_gt, rotations, translations, frame_label="hand", epoch=eye.epoch)
    return hand, eye


@pytest.fixture(scope="module")
def clean_pairs(clean_bundle):
    hand, eye = exact_grid(clean_bundle)
    return build_pairs(hand, eye, eta=np.radians(5.0), overlapping=True)


def test_robust_weight_values():
    assert robust_weight(1.0, 5.0) == 1.0
    assert robust_weight(1.2, 5.0) == pytest.approx(np.exp(-2.2), rel=1e-12)
    weights = robust_weight(np.array([1.0, 1e3]), 5.0)
    assert weights[0] == 1.0
    assert weights[1] > 0.0


def test_consistent_pairs_score_one(clean_pairs):
    for pair in clean_pairs[:20]:
        assert screw_consistency_E(pair) == pytest.approx(1.0, abs=1e-9)


def test_true_extrinsic_lies_in_each_null_space(clean_bundle, clean_pairs):
    x = clean_bundle.extrinsic_gt.as_array()
    for pair in clean_pairs[:20]:
        np.testing.assert_allclose(coefficient_block(pair) @ x, 0.0, atol=1e-12)


def test_noise_free_system_has_two_dimensional_null_space(clean_bundle, clean_pairs):
    hand, eye = pair_arrays(clean_pairs)
    extrinsic, ratio = solve_dq_svd(LinearSystem(coefficient_blocks(hand, eye), np.ones(len(hand))))
    assert ratio < 1e-10
    trans_err, rot_err = extrinsic_error(extrinsic, clean_bundle.extrinsic_gt)
    assert trans_err < 1e-9
    assert rot_err < 1e-7
    assert extrinsic.std.w >= 0


def test_single_pair_is_ill_conditioned(clean_pairs):
    block = coefficient_block(clean_pairs[0])
    with pytest.raises(IllConditioned):
        solve_dq_svd(LinearSystem(block, [1.0]))


def test_rotconstr_pairs_reach_the_threshold(clean_bundle):
    hand, eye = exact_grid(clean_bundle)
    eta = np.radians(5.0)
    pairs = build_relative_pairs(hand, eye, eta)
    hand_rel, _ = pair_arrays(pairs)
    angles = 2.0 * np.arccos(np.clip(np.abs(hand_rel[:, 0]), 0.0, 1.0))
    assert np.all(angles >= eta - 1e-9)
    # Non-overlapping chain: each pair starts where the previous one ended
    assert all(a.j == b.i for a, b in zip(pairs, pairs[1:]))


def test_overlapping_pairs_advance_one_anchor(clean_pairs):
    assert [pair.i for pair in clean_pairs[:5]] == [0, 1, 2, 3, 4]


def test_motionless_run_has_no_pairs():
    n = 200
    times = np.arange(n) / 20.0
    still = Trajectory(times, np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)), np.zeros((n, 3)))
    with pytest.raises(NoPairs):
        build_pairs(still, still)


def test_unknown_strategy_is_rejected(clean_bundle):
    hand, eye = exact_grid(clean_bundle)
    with pytest.raises(ValueError):
        build_pairs(hand, eye, strategy="random")


def test_global_strategy_anchors_every_pair_at_zero(clean_bundle):
    hand, eye = exact_grid(clean_bundle)
    pairs = build_pairs(hand, eye, strategy="global")
    assert {pair.i for pair in pairs} == {0}
    result = calibrate_pairs(pairs, RansacSettings(strategy="global"))
    trans_err, rot_err = extrinsic_error(result.extrinsic, clean_bundle.extrinsic_gt)
    assert trans_err < 1e-6
    assert rot_err < 1e-5


def test_noise_free_calibration_on_aligned_grid(clean_bundle):
    """Linear solve with the true offset recovers the extrinsic on interpolated data"""
    hand, eye = align_to_grid(clean_bundle.hand, clean_bundle.eye_noisy, clean_bundle.dt_gt)
    pairs = build_pairs(hand, eye)
    result = ransac_calibrate(pairs, dt=clean_bundle.dt_gt)
    trans_err, rot_err = extrinsic_error(result.extrinsic, clean_bundle.extrinsic_gt)
    assert trans_err < 1e-3
    assert rot_err < 0.05
    assert result.dt == clean_bundle.dt_gt
    assert result.iterations_used == RansacSettings().max_iterations
    assert 0 <= result.best_iteration < result.iterations_used


def test_ransac_rejects_injected_outliers(clean_bundle, clean_pairs):
    corrupted, chosen = inject_outlier_pairs(clean_pairs, 0.3, rng_seed=7)
    result = ransac_calibrate(corrupted, RansacSettings(max_iterations=100))
    trans_err, rot_err = extrinsic_error(result.extrinsic, clean_bundle.extrinsic_gt)
    assert trans_err < 1e-6
    assert rot_err < 1e-5
    assert not result.inlier_mask[chosen].any()
    assert result.inlier_count == len(clean_pairs) - len(chosen)


@pytest.mark.parametrize("solver", ["rs", "rc"])
def test_baseline_solvers_recover_clean_extrinsic(clean_bundle, clean_pairs, solver):
    result = calibrate_pairs(clean_pairs, RansacSettings(solver=solver, max_iterations=50))
    assert result.solver == solver
    assert len(result.inlier_mask) == len(clean_pairs)
    trans_err, rot_err = extrinsic_error(result.extrinsic, clean_bundle.extrinsic_gt)
    assert trans_err < 1e-6
    assert rot_err < 1e-5


def test_ransac_is_deterministic_across_jobs(clean_pairs):
    serial = ransac_calibrate(clean_pairs, RansacSettings(max_iterations=40))
    threaded = ransac_calibrate(clean_pairs, RansacSettings(max_iterations=40, jobs=4))
    assert serial.best_iteration == threaded.best_iteration
    np.testing.assert_array_equal(serial.extrinsic.as_array(), threaded.extrinsic.as_array())


def test_pair_diagnostics_rows(clean_pairs):
    result = ransac_calibrate(clean_pairs, RansacSettings(max_iterations=20))
    rows = pair_diagnostics(clean_pairs, result, mu=5.0)
    assert len(rows) == len(clean_pairs)
    assert rows[0]["i"] == clean_pairs[0].i
    assert rows[0]["weight"] == pytest.approx(1.0, abs=1e-6)
    assert all(row["inlier"] for row in rows)
    assert max(row["residual_rot_deg"] for row in rows) < 1e-5


@pytest.mark.slow
def test_robust_solver_degrades_gracefully_with_drift(mc_seeds):
    """Mean extrinsic errors grow with drift but stay bounded at level 5"""
    errors = []
    for seed in range(mc_seeds):
        bundle = generate_bundle(preset="figure8", level=5, seed=200 + seed, duration=30.0)
        hand, eye = align_to_grid(bundle.hand, bundle.eye_noisy, bundle.dt_gt)
        result = ransac_calibrate(build_pairs(hand, eye), RansacSettings(min_inliers=5))
        errors.append(extrinsic_error(result.extrinsic, bundle.extrinsic_gt))
    trans_err, rot_err = np.mean(errors, axis=0)
    assert trans_err < 0.05
    assert rot_err < 2.0


def perturbed_pair_arrays(rng, extrinsic, count=30, sigma=1e-3):
    """Random hand motions and the matching eye motions X^-1 A X, each eye motion right-perturbed by sigma."""
    hand = dq_from_rt_arrays(quat_exp(rng.normal(scale=0.6, size=(count, 3))), rng.normal(scale=0.3, size=(count, 3)))
    x = extrinsic.as_array()
    eye = dq_multiply_arrays(dq_multiply_arrays(dq_conjugate_arrays(x), hand), x)
    noise = dq_from_rt_arrays(quat_exp(rng.normal(scale=sigma, size=(count, 3))), rng.normal(scale=sigma, size=(count, 3)))
    return hand, dq_multiply_arrays(eye, noise)


def test_svd_solve_picks_the_unit_root_on_noisy_systems():
    """Thirty slightly noisy pairs recover the rotation to within a degree on nearly every draw"""
    rot_errors, trans_errors = [], []
    for seed in range(200):
        rng = np.random.default_rng(seed)
        truth = random_extrinsic(rng)
        hand, eye = perturbed_pair_arrays(rng, truth)
        extrinsic, ratio = solve_dq_svd(LinearSystem(coefficient_blocks(hand, eye), np.ones(len(hand))))
        trans_err, rot_err = extrinsic_error(extrinsic, truth)
        rot_errors.append(rot_err)
        trans_errors.append(trans_err)
        assert 0.0 < ratio < 1.0
        assert np.isclose(np.linalg.norm(extrinsic.std.as_array()), 1.0)
    assert np.mean(np.array(rot_errors) < 1.0) >= 0.99
    assert np.median(trans_errors) < 0.01


def test_single_axis_motion_is_ill_conditioned(clean_bundle):
    """Pairs that all rotate about one axis never yield a minimal solution"""
    rng = np.random.default_rng(4)
    count = 40
    angles = rng.uniform(0.2, 1.0, size=count)
    hand = dq_from_rt_arrays(quat_exp(np.outer(angles, [0.0, 0.0, 1.0])), rng.normal(scale=0.2, size=(count, 3)))
    x = clean_bundle.extrinsic_gt.as_array()
    eye = dq_multiply_arrays(dq_multiply_arrays(dq_conjugate_arrays(x), hand), x)
    pairs = [RelativePosePair(DualQuat.from_array(h), DualQuat.from_array(e), k, k + 1)
             for k, (h, e) in enumerate(zip(hand, eye))]
    with pytest.raises(IllConditioned):
        ransac_calibrate(pairs, RansacSettings(max_iterations=20))


@pytest.mark.slow
def test_sigma_ratio_grows_with_noise_level(mc_seeds):
    """Median sigma7/sigma6 of the stacked system rises strictly across levels 0, 5 and 10"""
    medians = []
    for level in (0, 5, 10):
        ratios = []
        for seed in range(mc_seeds):
            bundle = generate_bundle(preset="figure8", level=level, seed=300 + seed, duration=30.0)
            hand, eye = exact_grid(bundle, noisy=True)
            hand_rel, eye_rel = pair_arrays(build_pairs(hand, eye))
            _, ratio = solve_dq_svd(LinearSystem(coefficient_blocks(hand_rel, eye_rel), np.ones(len(hand_rel))))
            ratios.append(ratio)
        medians.append(np.median(ratios))
    assert medians[0] < 1e-10
    assert medians[0] < medians[1] < medians[2]


@pytest.mark.slow
def test_ransac_survives_outliers_on_noisy_pairs(mc_seeds):
    """Thirty percent replaced eye motions at level 3 are rejected and the estimate stays bounded"""
    errors, accepted = [], []
    for seed in range(mc_seeds):
        bundle = generate_bundle(preset="figure8", level=3, seed=400 + seed, duration=30.0)
        hand, eye = align_to_grid(bundle.hand, bundle.eye_noisy, bundle.dt_gt)
        corrupted, chosen = inject_outlier_pairs(build_pairs(hand, eye), 0.3, rng_seed=seed)
        result = ransac_calibrate(corrupted, RansacSettings(min_inliers=5))
        errors.append(extrinsic_error(result.extrinsic, bundle.extrinsic_gt))
        accepted.append(result.inlier_mask[chosen].mean())
    trans_err, rot_err = np.mean(errors, axis=0)
    assert trans_err < 0.05
    assert rot_err < 2.0
    assert np.mean(accepted) < 0.05
