"""
Evaluation Metrics
Global frame alignment, absolute trajectory errors and extrinsic error metrics
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateGeometry, NoMatches
from .screw_algebra import (
    DualQuat,
    Quat,
    dq_compose,
    dq_inverse,
    quat_angles,
    quat_conjugate,
    quat_from_rotation,
    quat_multiply,
    quat_rotate,
    quat_to_rotation,
    rotation_angle,
    translation_norm,
)
from .trajectory_io import Trajectory, shift_time

logger = logging.getLogger(__name__)

COLLINEAR_TOLERANCE = 1e-9
ALIGN_MODES = ("umeyama", "calibrated")


@dataclass(frozen=True)
class AlignmentSE3:
    rotation: Quat
    translation: np.ndarray
    scale: float = 1.0

    @classmethod
    def identity(cls) -> "AlignmentSE3":
        return cls(Quat.identity(), np.zeros(3))

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.scale * quat_to_rotation(self.rotation.as_array()).as_matrix()
        matrix[:3, 3] = self.translation
        return matrix

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        return self.scale * quat_rotate(self.rotation.as_array(), points) + self.translation

    def apply(self, traj: Trajectory) -> Trajectory:
        """Left-multiply every pose (positions scaled)."""
        rotations = quat_multiply(self.rotation.as_array(), traj.rotations)
        return traj.with_poses(rotations, self.apply_points(traj.translations))


@dataclass
class MetricReport:
    ape_rmse: float
    are_rmse: float
    ape_errors: np.ndarray
    are_errors: np.ndarray
    times: np.ndarray
    matched_count: int
    unmatched_count: int = 0
    alignment: AlignmentSE3 = field(default_factory=AlignmentSE3.identity)

    def stats(self) -> Dict[str, float]:
        return {
            "ape_rmse": self.ape_rmse,
            "ape_mean": float(np.mean(self.ape_errors)),
            "ape_median": float(np.median(self.ape_errors)),
            "ape_max": float(np.max(self.ape_errors)),
            "are_rmse": self.are_rmse,
            "are_mean": float(np.mean(self.are_errors)),
            "are_max": float(np.max(self.are_errors)),
        }


def umeyama_align(src_positions, dst_positions, with_scale: bool = False) -> AlignmentSE3:
    """Least-squares transform with dst ~ s * R @ src + t, reflection-corrected."""
    x = np.asarray(src_positions, dtype=float)
    y = np.asarray(dst_positions, dtype=float)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise ValueError("point sets must both be (n, 3)")
    if len(x) < 3:
        raise DegenerateGeometry(f"need at least 3 correspondences, got {len(x)}")

    n = len(x)
    ux, uy = x.mean(axis=0), y.mean(axis=0)
    dx, dy = x - ux, y - uy
    spread = np.linalg.svd(dx, compute_uv=False)
    if spread[0] < COLLINEAR_TOLERANCE or spread[1] < COLLINEAR_TOLERANCE * spread[0]:
        raise DegenerateGeometry("source points are coincident or collinear")

    sigma = dy.T @ dx / n
    U, d, V_t = np.linalg.svd(sigma)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(V_t.T) < 0:
        S[2, 2] = -1
    R = U @ S @ V_t

    scale = 1.0
    if with_scale:
        scale = float((d * S.diagonal()).sum() / dx.var(axis=0).sum())
    t = uy - scale * R @ ux
    rotation = Quat.from_array(quat_from_rotation(Rotation.from_matrix(R)))
    return AlignmentSE3(rotation=rotation, translation=t, scale=scale)


def transform_ground_truth(hand: Trajectory, result) -> Trajectory:
    """Hand poses carried to the eye frame (pose * X) and onto the eye clock (t - dt)."""
    x = result.extrinsic.as_array()
    rotations = quat_multiply(hand.rotations, x[:4])
    translations = hand.translations + quat_rotate(hand.rotations, result.extrinsic.translation)
    moved = Trajectory(hand.times, rotations, translations, frame_label=f"{hand.frame_label}_eye", epoch=hand.epoch)
    return shift_time(moved, -result.dt)


def associate(est: Trajectory, gt: Trajectory, max_dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """One-to-one nearest-timestamp matches within max_dt, as (est indices, gt indices)."""
    est_times = est.absolute_times
    gt_times = gt.absolute_times
    right = np.clip(np.searchsorted(gt_times, est_times), 0, len(gt_times) - 1)
    left = np.clip(right - 1, 0, len(gt_times) - 1)
    nearest = np.where(np.abs(gt_times[left] - est_times) <= np.abs(gt_times[right] - est_times), left, right)
    distance = np.abs(gt_times[nearest] - est_times)
    candidates = np.flatnonzero(distance <= max_dt)

    # Each gt sample keeps only its closest est sample
    order = candidates[np.lexsort((distance[candidates], nearest[candidates]))]
    _, first = np.unique(nearest[order], return_index=True)
    chosen = np.sort(order[first])
    return chosen, nearest[chosen]


def compute_ape_are(est: Trajectory, gt: Trajectory, max_dt: float = 0.01) -> MetricReport:
    """RMSE of position distances (m) and geodesic rotation angles (deg) over associated samples."""
    est_idx, gt_idx = associate(est, gt, max_dt)
    if len(est_idx) == 0:
        raise NoMatches(f"no timestamps match within {max_dt * 1e3:.1f} ms")
    ape = np.linalg.norm(est.translations[est_idx] - gt.translations[gt_idx], axis=1)
    relative = quat_multiply(quat_conjugate(gt.rotations[gt_idx]), est.rotations[est_idx])
    are = np.degrees(quat_angles(relative))
    return MetricReport(
        ape_rmse=float(np.sqrt(np.mean(ape ** 2))),
        are_rmse=float(np.sqrt(np.mean(are ** 2))),
        ape_errors=ape,
        are_errors=are,
        times=est.absolute_times[est_idx],
        matched_count=len(est_idx),
        unmatched_count=len(est) - len(est_idx),
    )


def align_ground_truth(est: Trajectory, gt: Trajectory, max_dt: float = 0.01, mode: str = "umeyama",
                       with_scale: bool = False) -> Tuple[Trajectory, AlignmentSE3]:
    """Express gt in the estimate's global frame.

    ``umeyama`` fits the frame over all matched positions; ``calibrated``
    takes it from the first matched pose pair alone.
    """
    if mode not in ALIGN_MODES:
        raise ValueError(f"unknown alignment mode {mode!r}, expected one of {ALIGN_MODES}")
    est_idx, gt_idx = associate(est, gt, max_dt)
    if len(est_idx) == 0:
        raise NoMatches(f"no timestamps match within {max_dt * 1e3:.1f} ms")
    if mode == "umeyama":
        alignment = umeyama_align(gt.translations[gt_idx], est.translations[est_idx], with_scale)
    else:
        first_est = est.pose(int(est_idx[0]))
        first_gt = gt.pose(int(gt_idx[0]))
        frame = dq_compose(first_est, dq_inverse(first_gt))
        alignment = AlignmentSE3(frame.rotation, frame.translation)
    return alignment.apply(gt), alignment


def evaluate_trajectory(est: Trajectory, gt_raw: Trajectory, result, max_dt: float = 0.01,
                        mode: str = "umeyama", with_scale: bool = False) -> MetricReport:
    """Transform raw hand ground truth with the calibration, align it to est and score est."""
    gt = transform_ground_truth(gt_raw, result)
    aligned, alignment = align_ground_truth(est, gt, max_dt, mode, with_scale)
    report = compute_ape_are(est, aligned, max_dt)
    report.alignment = alignment
    logger.info("APE %.4f m, ARE %.4f deg over %d matched poses (%d unmatched)",
                report.ape_rmse, report.are_rmse, report.matched_count, report.unmatched_count)
    return report


def extrinsic_error(est: DualQuat, ref: DualQuat) -> Tuple[float, float]:
    """(translation m, rotation deg) of the left residual est * ref^-1."""
    residual = dq_compose(est, dq_inverse(ref))
    return translation_norm(residual), float(np.degrees(rotation_angle(residual)))


def _extrinsic_of(value: Union[DualQuat, object]) -> DualQuat:
    return value if isinstance(value, DualQuat) else value.extrinsic


def relative_translation_check(result_a, result_b) -> float:
    """Norm of the translation of X_a * X_b^-1, compared against a measured marker shift."""
    relative = dq_compose(_extrinsic_of(result_a), dq_inverse(_extrinsic_of(result_b)))
    return translation_norm(relative)

