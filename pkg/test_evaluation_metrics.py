"""
Tests for association, Umeyama alignment and APE/ARE scoring
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.spatial.transform import Rotation

from run_config import RunConfig
from services.errors import DegenerateGeometry, NoMatches
from services.evaluation_metrics import (
    associate,
    compute_ape_are,
    evaluate_trajectory,
    extrinsic_error,
    relative_translation_check,
    transform_ground_truth,
    umeyama_align,
)
from services.linear_calibration import CalibrationResult
from services.screw_algebra import Quat, dq_compose, dq_from_rt
from services.synthetic_generator import generate_bundle
from services.trajectory_io import Trajectory
from stages.batch_refinement_stage import BatchRefinementStage
from stages.linear_calibration_stage import LinearCalibrationStage
from stages.time_alignment_stage import TimeAlignmentStage


def calibration(extrinsic, dt):
    return CalibrationResult(extrinsic=extrinsic, dt=dt, inlier_mask=np.zeros(0, dtype=bool),
                             quality=0.0, iterations_used=0)


def static_trajectory(times, epoch=0.0):
    n = len(times)
    return Trajectory(np.asarray(times, dtype=float), np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
                      np.zeros((n, 3)), epoch=epoch)


@pytest.mark.parametrize("with_scale, scale", [(False, 1.0), (True, 2.5)])
def test_umeyama_recovers_similarity(with_scale, scale):
    rng = np.random.default_rng(0)
    src = rng.normal(size=(50, 3))
    rotation = Rotation.random(random_state=rng)
    translation = np.array([1.0, -2.0, 0.5])
    dst = scale * rotation.apply(src) + translation
    alignment = umeyama_align(src, dst, with_scale=with_scale)
    assert alignment.scale == pytest.approx(scale, rel=1e-10)
    assert_allclose(alignment.translation, translation, atol=1e-10)
    assert_allclose(alignment.apply_points(src), dst, atol=1e-10)


def test_umeyama_rejects_collinear_points():
    line = np.outer(np.linspace(0.0, 1.0, 10), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateGeometry):
        umeyama_align(line, line)


def test_umeyama_needs_three_points():
    with pytest.raises(DegenerateGeometry):
        umeyama_align(np.eye(3)[:2], np.eye(3)[:2])


def test_association_is_one_to_one():
    est = static_trajectory([0.0, 0.004, 0.1, 0.5])
    gt = static_trajectory([0.001, 0.1])
    est_idx, gt_idx = associate(est, gt, max_dt=0.01)
    assert est_idx.tolist() == [0, 2]
    assert gt_idx.tolist() == [0, 1]


def test_association_uses_absolute_time():
    est = static_trajectory([0.0, 1.0], epoch=100.0)
    gt = static_trajectory([1.0, 2.0], epoch=99.0)
    est_idx, gt_idx = associate(est, gt, max_dt=0.01)
    assert est_idx.tolist() == [0, 1]
    assert gt_idx.tolist() == [0, 1]


def test_disjoint_timestamps_have_no_matches():
    with pytest.raises(NoMatches):
        compute_ape_are(static_trajectory([0.0, 1.0]), static_trajectory([5.0, 6.0]))


def test_true_calibration_scores_zero(clean_bundle):
    result = calibration(clean_bundle.extrinsic_gt, clean_bundle.dt_gt)
    report = evaluate_trajectory(clean_bundle.eye_clean, clean_bundle.hand, result)
    assert report.matched_count == len(clean_bundle.eye_clean)
    assert report.unmatched_count == 0
    assert report.ape_rmse < 1e-6
    assert report.are_rmse < 1e-5
    assert report.stats()["ape_max"] >= report.stats()["ape_median"]


def test_calibrated_alignment_matches_umeyama_on_clean_data(clean_bundle):
    result = calibration(clean_bundle.extrinsic_gt, clean_bundle.dt_gt)
    report = evaluate_trajectory(clean_bundle.eye_clean, clean_bundle.hand, result, mode="calibrated")
    assert report.ape_rmse < 1e-6
    assert_allclose(report.alignment.as_matrix(), clean_bundle.global_offset.as_matrix(), atol=1e-6)


def test_wrong_extrinsic_raises_the_error(clean_bundle):
    shifted = dq_from_rt(Quat.identity(), [0.05, 0.0, 0.0]) * clean_bundle.extrinsic_gt
    report = evaluate_trajectory(clean_bundle.eye_clean, clean_bundle.hand, calibration(shifted, clean_bundle.dt_gt))
    assert report.ape_rmse > 1e-3


def test_unknown_alignment_mode_is_rejected(clean_bundle):
    result = calibration(clean_bundle.extrinsic_gt, clean_bundle.dt_gt)
    with pytest.raises(ValueError):
        evaluate_trajectory(clean_bundle.eye_clean, clean_bundle.hand, result, mode="sim3")


def test_extrinsic_error_of_identical_poses():
    pose = dq_from_rt(Quat.from_rotvec([0.1, 0.2, 0.3]), [0.1, 0.0, -0.2])
    assert extrinsic_error(pose, pose) == pytest.approx((0.0, 0.0), abs=1e-12)


def test_relative_translation_check_measures_marker_shift():
    rotation = Quat.from_rotvec([0.4, -0.1, 0.9])
    a = dq_from_rt(rotation, [0.10, 0.20, 0.30])
    b = dq_from_rt(rotation, [0.13, 0.20, 0.34])
    assert relative_translation_check(a, calibration(b, 0.0)) == pytest.approx(0.05, abs=1e-12)


def test_ground_truth_moves_onto_the_eye_frame_and_clock(clean_bundle):
    hand = clean_bundle.hand
    moved = transform_ground_truth(hand, calibration(clean_bundle.extrinsic_gt, clean_bundle.dt_gt))
    assert_allclose(moved.absolute_times, hand.absolute_times - clean_bundle.dt_gt, atol=1e-12)
    k = len(hand) // 2
    expected = hand.pose(k) * clean_bundle.extrinsic_gt
    assert_allclose(moved.pose(k).translation, expected.translation, atol=1e-12)


def calibrate_simulated(bundle, config):
    data = {"hand": bundle.hand, "eye": bundle.eye_noisy, "force": True}
    data.update(TimeAlignmentStage(config).process(data))
    data.update(LinearCalibrationStage(config).process(data))
    return BatchRefinementStage(config).process(data)["calibration"]


@pytest.mark.slow
def test_relative_translation_of_shifted_markers_at_level_five():
    """Two noisy calibrations of one rig with the marker moved 0.1, 0.2 and 0.3 m apart"""
    config = RunConfig(force=True)
    errors = []
    for k, shift in enumerate((0.1, 0.2, 0.3)):
        first = generate_bundle(preset="figure8", level=5, seed=900 + k, duration=30.0)
        direction = np.array([1.0, -2.0, 0.5]) / np.linalg.norm([1.0, -2.0, 0.5])
        moved = dq_compose(dq_from_rt(Quat.identity(), shift * direction), first.extrinsic_gt)
        second = generate_bundle(preset="figure8", level=5, seed=950 + k, duration=30.0, extrinsic=moved)
        assert relative_translation_check(first.extrinsic_gt, second.extrinsic_gt) == pytest.approx(shift, abs=1e-12)
        measured = relative_translation_check(calibrate_simulated(first, config), calibrate_simulated(second, config))
        errors.append(abs(measured - shift))
    assert np.mean(errors) < 5e-3
