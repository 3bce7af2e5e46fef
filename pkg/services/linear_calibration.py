"""
Linear Calibration
Robust linear hand-eye solve on dual quaternions: rotationally constrained pair
construction, screw-consistency weighting and RANSAC scored by sigma7/sigma6.

Pairs follow hand_rel * X = X * eye_rel, with X the hand-to-eye extrinsic.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DegeneratePair,
    IllConditioned,
    NoConsensus,
    NoPairs,
    QuadraticDegenerate,
)
from .screw_algebra import (
    DualQuat,
    dq_canonicalize_arrays,
    dq_conjugate_arrays,
    dq_multiply_arrays,
    dq_translation_norms,
    quat_angles,
)
from .trajectory_io import Trajectory

logger = logging.getLogger(__name__)

SCALAR_EPSILON = 1e-12
SIGMA_FLOOR = 1e-12
MIN_PAIR_ANGLE = 1e-3
SAMPLE_ATTEMPTS = 100
SEARCH_CHUNK = 256
STRATEGIES = ("rotconstr", "global", "interframe")


@dataclass(frozen=True)
class RansacSettings:
    """RANSAC and pair-weighting settings; angles in radians"""

    max_iterations: int = 200
    min_inliers: int = 10
    phi: float = math.radians(0.5)
    psi: float = 0.02
    parallel_axis: float = math.radians(1.0)
    mu: float = 5.0
    robust_kernel: bool = True
    scalar_tolerance: float = 0.01
    solver: str = "robust"
    strategy: str = "rotconstr"
    rng_seed: int = 0
    jobs: int = 1


@dataclass(frozen=True)
class RelativePosePair:
    hand_rel: DualQuat
    eye_rel: DualQuat
    i: int
    j: int
    weight: float = 1.0
    consistency: float = 1.0


@dataclass
class LinearSystem:
    """Per-pair 6x8 blocks with one scalar weight each"""

    blocks: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.blocks = np.asarray(self.blocks, dtype=float).reshape(-1, 6, 8)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.blocks) != len(self.weights):
            raise ValueError("one weight per block is required")

    def __len__(self) -> int:
        return len(self.blocks)

    def stacked(self) -> np.ndarray:
        return (self.blocks * self.weights[:, None, None]).reshape(-1, 8)


@dataclass
class CalibrationResult:
    extrinsic: DualQuat
    dt: float
    inlier_mask: np.ndarray
    quality: float
    iterations_used: int
    solver: str = "robust"
    best_iteration: int = -1
    strategy: str = "rotconstr"

    @property
    def inlier_count(self) -> int:
        return int(np.count_nonzero(self.inlier_mask))


# ---------------------------------------------------------------------------
# Pair construction
# ---------------------------------------------------------------------------

def _relative(poses: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    return dq_canonicalize_arrays(dq_multiply_arrays(dq_conjugate_arrays(poses[i]), poses[j]))


def _gap_breaks(eye: Trajectory) -> np.ndarray:
    """Cumulative count of eye gaps so that a pair (i, j) spans a gap iff breaks[i] != breaks[j]."""
    steps = np.zeros(len(eye), dtype=int)
    for index, _ in eye.gaps():
        steps[index + 1] = 1
    return np.cumsum(steps)


def _first_exceeding(rotations: np.ndarray, anchor: int, eta: float) -> Optional[int]:
    threshold = eta - SCALAR_EPSILON
    conj = rotations[anchor] * np.array([1.0, -1.0, -1.0, -1.0])
    start = anchor + 1
    while start < len(rotations):
        stop = min(start + SEARCH_CHUNK, len(rotations))
        q = rotations[start:stop]
        # w of conj(anchor) * q for the whole chunk
        w = conj[0] * q[:, 0] - conj[1] * q[:, 1] - conj[2] * q[:, 2] - conj[3] * q[:, 3]
        v = np.stack([
            conj[0] * q[:, 1] + conj[1] * q[:, 0] + conj[2] * q[:, 3] - conj[3] * q[:, 2],
            conj[0] * q[:, 2] - conj[1] * q[:, 3] + conj[2] * q[:, 0] + conj[3] * q[:, 1],
            conj[0] * q[:, 3] + conj[1] * q[:, 2] - conj[2] * q[:, 1] + conj[3] * q[:, 0],
        ], axis=-1)
        angles = 2.0 * np.arctan2(np.linalg.norm(v, axis=-1), np.abs(w))
        hits = np.flatnonzero(angles >= threshold)
        if hits.size:
            return start + int(hits[0])
        start = stop
    return None


def _rotconstr_indices(rotations: np.ndarray, eta: float, overlapping: bool) -> List[Tuple[int, int]]:
    indices = []
    anchor = 0
    while anchor < len(rotations) - 1:
        j = _first_exceeding(rotations, anchor, eta)
        if j is None:
            break
        indices.append((anchor, j))
        anchor = anchor + 1 if overlapping else j
    return indices


def _pairs_from_indices(hand: Trajectory, eye: Trajectory, indices: Sequence[Tuple[int, int]]) -> List[RelativePosePair]:
    if not indices:
        return []
    index = np.asarray(indices, dtype=int)
    breaks = _gap_breaks(eye)
    keep = breaks[index[:, 0]] == breaks[index[:, 1]]
    if not keep.all():
        logger.warning("Dropped %d pairs spanning eye data gaps", int((~keep).sum()))
    index = index[keep]
    hand_rel = _relative(hand.dual_quaternions(), index[:, 0], index[:, 1])
    eye_rel = _relative(eye.dual_quaternions(), index[:, 0], index[:, 1])
    return [
        RelativePosePair(DualQuat.from_array(h, restore=False), DualQuat.from_array(e, restore=False), int(i), int(j))
        for h, e, (i, j) in zip(hand_rel, eye_rel, index)
    ]


def build_relative_pairs(hand: Trajectory, eye: Trajectory, eta: float, overlapping: bool = False) -> List[RelativePosePair]:
    """Rotationally constrained pairs on index-corresponding hand/eye samples.

    From each anchor the first later sample whose hand rotation relative to
    the anchor reaches ``eta`` closes a pair. The next anchor is that sample
    (non-overlapping chain) or the following index when ``overlapping``.
    """
    if len(hand) != len(eye):
        raise ValueError("hand and eye must share one sample grid")
    pairs = _pairs_from_indices(hand, eye, _rotconstr_indices(hand.rotations, eta, overlapping))
    if len(pairs) < 2:
        raise NoPairs(f"only {len(pairs)} pairs reach {np.degrees(eta):.2f} deg of rotation; "
                      "the motion lacks rotational excitation")
    return pairs


def build_pairs(hand: Trajectory, eye: Trajectory, strategy: str = "rotconstr", eta: float = np.radians(5.0),
                overlapping: bool = False) -> List[RelativePosePair]:
    """Pairs for any construction strategy: rotconstr, global (0, j) or interframe (i, i+1)."""
    if strategy == "rotconstr":
        return build_relative_pairs(hand, eye, eta, overlapping)
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown pair strategy {strategy!r}, expected one of {STRATEGIES}")
    if len(hand) != len(eye):
        raise ValueError("hand and eye must share one sample grid")

    n = len(hand)
    if strategy == "global":
        i = np.zeros(n - 1, dtype=int)
        j = np.arange(1, n)
    else:
        i = np.arange(n - 1)
        j = i + 1
    rel = _relative(hand.dual_quaternions(), i, j)
    moving = quat_angles(rel[:, :4]) >= MIN_PAIR_ANGLE
    pairs = _pairs_from_indices(hand, eye, list(zip(i[moving], j[moving])))
    if len(pairs) < 2:
        raise NoPairs(f"strategy {strategy} produced only {len(pairs)} moving pairs")
    return pairs


def pair_arrays(pairs: Sequence[RelativePosePair]) -> Tuple[np.ndarray, np.ndarray]:
    """(n, 8) hand and eye relative motions."""
    hand = np.array([pair.hand_rel.as_array() for pair in pairs])
    eye = np.array([pair.eye_rel.as_array() for pair in pairs])
    return hand, eye


# ---------------------------------------------------------------------------
# Linear system
# ---------------------------------------------------------------------------

def _skew(v: np.ndarray) -> np.ndarray:
    """(..., 3, 3) cross-product matrices with skew(a) @ b = a x b."""
    zero = np.zeros(v.shape[:-1])
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([
        np.stack([zero, -z, y], axis=-1),
        np.stack([z, zero, -x], axis=-1),
        np.stack([-y, x, zero], axis=-1),
    ], axis=-2)


def coefficient_blocks(hand: np.ndarray, eye: np.ndarray) -> np.ndarray:
    """Vectorized coefficient_block over (n, 8) relative motions -> (n, 6, 8)."""
    hand = np.asarray(hand, dtype=float).reshape(-1, 8)
    eye = np.asarray(eye, dtype=float).reshape(-1, 8)
    r, r_dual = hand[:, 1:4], hand[:, 5:8]
    s, s_dual = eye[:, 1:4], eye[:, 5:8]
    blocks = np.zeros((len(hand), 6, 8))
    blocks[:, :3, 0] = r - s
    blocks[:, :3, 1:4] = _skew(r + s)
    blocks[:, 3:, 0] = r_dual - s_dual
    blocks[:, 3:, 1:4] = _skew(r_dual + s_dual)
    blocks[:, 3:, 4] = r - s
    blocks[:, 3:, 5:8] = _skew(r + s)
    return blocks


def coefficient_block(pair: RelativePosePair) -> np.ndarray:
    """6x8 block S with S @ [q_w, q_xyz, q'_w, q'_xyz] = 0 for the true extrinsic."""
    return coefficient_blocks(pair.hand_rel.as_array(), pair.eye_rel.as_array())[0]


# ---------------------------------------------------------------------------
# Robust kernel
# ---------------------------------------------------------------------------

def _ratio(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.abs(a), np.abs(b)
    return np.maximum(a, b) / np.minimum(a, b)


def screw_consistency_arrays(hand: np.ndarray, eye: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """E per pair plus a mask of pairs whose E is defined (|omega| above epsilon)."""
    omega_h, omega_e = np.abs(hand[:, 0]), np.abs(eye[:, 0])
    dual_h, dual_e = np.abs(hand[:, 4]), np.abs(eye[:, 4])
    valid = np.minimum(omega_h, omega_e) >= SCALAR_EPSILON
    with np.errstate(divide="ignore", invalid="ignore"):
        primary = np.where(valid, _ratio(omega_h, omega_e), np.inf)
        # A vanishing dual scalar (pitch ~ 0) leaves the second ratio undefined; count it as consistent
        has_dual = np.minimum(dual_h, dual_e) >= SCALAR_EPSILON
        secondary = np.where(has_dual, _ratio(dual_h, dual_e), 1.0)
    return 0.5 * (primary + secondary), valid


def screw_consistency_E(pair: RelativePosePair) -> float:
    """Screw-congruence score, 1 when hand and eye scalar parts agree exactly."""
    values, valid = screw_consistency_arrays(pair.hand_rel.as_array()[None], pair.eye_rel.as_array()[None])
    if not valid[0]:
        raise DegeneratePair(f"pair ({pair.i}, {pair.j}) has a vanishing rotation scalar part")
    return float(values[0])


def robust_weight(E, mu: float):
    """exp(mu * (1 - E^2)), kept strictly positive."""
    weight = np.exp(mu * (1.0 - np.square(E)))
    weight = np.maximum(weight, np.finfo(float).tiny)
    return float(weight) if np.ndim(weight) == 0 else weight


def apply_robust_weights(pairs: Sequence[RelativePosePair], mu: float) -> List[RelativePosePair]:
    """Pairs annotated with E and W; pairs with undefined E are dropped."""
    hand, eye = pair_arrays(pairs)
    values, valid = screw_consistency_arrays(hand, eye)
    if not valid.all():
        logger.warning("Dropped %d degenerate pairs with vanishing rotation scalar part", int((~valid).sum()))
    weights = robust_weight(values, mu)
    return [
        replace(pair, weight=float(w), consistency=float(e))
        for pair, e, w, ok in zip(pairs, values, np.atleast_1d(weights), valid) if ok
    ]


# ---------------------------------------------------------------------------
# Solving
# ---------------------------------------------------------------------------

def solve_dq_svd(system: LinearSystem) -> Tuple[DualQuat, float]:
    """Unit dual quaternion in the two-dimensional near-null space of the stacked system.

    Returns the sign-canonical extrinsic and sigma7/sigma6.
    """
    if len(system) < 2:
        raise IllConditioned(f"need at least two blocks, got {len(system)}")
    _, sigma, vt = np.linalg.svd(system.stacked(), full_matrices=False)
    if sigma[5] < SIGMA_FLOOR * max(1.0, sigma[0]):
        raise IllConditioned(f"sigma6 = {sigma[5]:.3g}: the pairs span fewer than two rotation axes")
    ratio = float(sigma[6] / sigma[5])

    v7, v8 = vt[6], vt[7]
    u1, w1, u2, w2 = v7[:4], v7[4:], v8[:4], v8[4:]
    a = u1 @ w1
    b = u1 @ w2 + u2 @ w1
    c = u2 @ w2

    # Each candidate is (unit-constraint value before normalization, normalized solution)
    candidates: List[Tuple[float, np.ndarray]] = []
    if abs(a) < SCALAR_EPSILON:
        # lambda2 = 0 satisfies the constraint; it is the s -> inf root, whose value is unbounded
        if u1 @ u1 > SCALAR_EPSILON:
            candidates.append((np.inf, v7 / np.linalg.norm(u1)))
        if abs(b) >= SCALAR_EPSILON:
            candidates.append(_scaled(-c / b, v7, v8, u1, u2))
    else:
        discriminant = b * b - 4.0 * a * c
        if discriminant < 0.0:
            if discriminant < -1e-9 * (b * b + abs(4.0 * a * c)):
                raise QuadraticDegenerate(f"unit constraint has no real root (discriminant {discriminant:.3g})")
            discriminant = 0.0
        root = np.sqrt(discriminant)
        for s in ((-b + root) / (2.0 * a), (-b - root) / (2.0 * a)):
            candidates.append(_scaled(s, v7, v8, u1, u2))

    candidates = [(value, x) for value, x in candidates if x is not None and np.all(np.isfinite(x))]
    if not candidates:
        raise QuadraticDegenerate("both roots of the unit constraint are degenerate")
    _, best = max(candidates, key=lambda candidate: candidate[0])
    return DualQuat.from_array(best), ratio


def _scaled(s: float, v7, v8, u1, u2) -> Tuple[float, Optional[np.ndarray]]:
    """Value of s^2 u1.u1 + 2s u1.u2 + u2.u2 and the solution it normalizes to (lambda1 = s * lambda2)."""
    value = float(s * s * (u1 @ u1) + 2.0 * s * (u1 @ u2) + u2 @ u2)
    if value <= SCALAR_EPSILON:
        return value, None
    lambda2 = 1.0 / np.sqrt(value)
    return value, s * lambda2 * v7 + lambda2 * v8


def residual_arrays(x: DualQuat, hand: np.ndarray, eye: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Rotation angle (rad) and translation norm (m) of x * eye_rel * x^-1 * hand_rel^-1."""
    x_arr = x.as_array()
    residual = dq_multiply_arrays(dq_multiply_arrays(dq_multiply_arrays(x_arr, eye), dq_conjugate_arrays(x_arr)),
                                  dq_conjugate_arrays(hand))
    return quat_angles(residual[:, :4]), dq_translation_norms(residual)


def inlier_check(x: DualQuat, pair: RelativePosePair, phi: float, psi: float) -> bool:
    angle, norm = residual_arrays(x, pair.hand_rel.as_array()[None], pair.eye_rel.as_array()[None])
    return bool(angle[0] < phi and norm[0] < psi)


# ---------------------------------------------------------------------------
# RANSAC
# ---------------------------------------------------------------------------

@dataclass
class _IterationOutcome:
    iteration: int
    inliers: int = 0
    extrinsic: Optional[DualQuat] = None
    ratio: float = np.inf
    failure: Optional[str] = None
    solved: bool = False


@dataclass
class _PairData:
    hand: np.ndarray
    eye: np.ndarray
    blocks: np.ndarray
    weights: np.ndarray
    axes: np.ndarray = field(init=False)

    def __post_init__(self):
        vectors = self.hand[:, 1:4]
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        self.axes = np.divide(vectors, norms, out=np.zeros_like(vectors), where=norms > 0)


def _draw_sample(rng: np.random.Generator, data: _PairData, min_axis_angle: float) -> Optional[np.ndarray]:
    cos_limit = np.cos(min_axis_angle)
    for _ in range(SAMPLE_ATTEMPTS):
        sample = rng.choice(len(data.hand), size=2, replace=False)
        if abs(data.axes[sample[0]] @ data.axes[sample[1]]) < cos_limit:
            return sample
    return None


def _iteration(it: int, data: _PairData, cfg: RansacSettings, weighted: bool) -> _IterationOutcome:
    rng = np.random.default_rng([cfg.rng_seed, it])
    sample = _draw_sample(rng, data, cfg.parallel_axis)
    if sample is None:
        return _IterationOutcome(it, failure="parallel")
    try:
        initial, _ = solve_dq_svd(LinearSystem(data.blocks[sample], np.ones(2)))
    except (IllConditioned, QuadraticDegenerate) as e:
        return _IterationOutcome(it, failure=type(e).__name__)

    angle, norm = residual_arrays(initial, data.hand, data.eye)
    mask = (angle < cfg.phi) & (norm < cfg.psi)
    count = int(mask.sum())
    if count < cfg.min_inliers:
        return _IterationOutcome(it, inliers=count, solved=True)

    weights = data.weights[mask] if weighted else np.ones(count)
    try:
        refined, ratio = solve_dq_svd(LinearSystem(data.blocks[mask], weights))
    except (IllConditioned, QuadraticDegenerate) as e:
        return _IterationOutcome(it, inliers=count, failure=type(e).__name__, solved=True)
    return _IterationOutcome(it, inliers=count, extrinsic=refined, ratio=ratio, solved=True)


def _run_ransac(data: _PairData, cfg: RansacSettings, weighted: bool, select: str) -> Tuple[_IterationOutcome, List[_IterationOutcome]]:
    iterations = range(cfg.max_iterations)
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as executor:
            outcomes = list(executor.map(lambda it: _iteration(it, data, cfg, weighted), iterations))
    else:
        outcomes = [_iteration(it, data, cfg, weighted) for it in iterations]

    scored = [o for o in outcomes if o.extrinsic is not None]
    if not scored:
        best_count = max((o.inliers for o in outcomes), default=0)
        if not any(o.solved for o in outcomes):
            reasons = sorted({o.failure for o in outcomes if o.failure})
            raise IllConditioned(f"no RANSAC sample produced a model ({', '.join(reasons)}); "
                                 "the pairs need at least two non-parallel rotation axes")
        raise NoConsensus(f"best model has {best_count} inliers, need {cfg.min_inliers}",
                          best_inliers=best_count)
    if select == "ratio":
        best = min(scored, key=lambda o: (o.ratio, o.iteration))
    else:
        best = min(scored, key=lambda o: (-o.inliers, o.iteration))
    return best, outcomes


def _finish(best: _IterationOutcome, data: _PairData, cfg: RansacSettings, dt: float, solver: str) -> CalibrationResult:
    angle, norm = residual_arrays(best.extrinsic, data.hand, data.eye)
    mask = (angle < cfg.phi) & (norm < cfg.psi)
    result = CalibrationResult(
        extrinsic=best.extrinsic,
        dt=float(dt),
        inlier_mask=mask,
        quality=float(best.ratio),
        iterations_used=cfg.max_iterations,
        solver=solver,
        best_iteration=best.iteration,
        strategy=cfg.strategy,
    )
    logger.info("%s solver: %d/%d inliers, sigma7/sigma6 = %.3g (iteration %d)",
                solver, result.inlier_count, len(mask), result.quality, best.iteration)
    return result


def ransac_calibrate(pairs: Sequence[RelativePosePair], cfg: Optional[RansacSettings] = None,
                     dt: float = 0.0) -> CalibrationResult:
    """Sample two pairs, classify, re-solve weighted on the inliers; keep the smallest sigma7/sigma6."""
    cfg = cfg or RansacSettings()
    if len(pairs) < 2:
        raise NoPairs(f"RANSAC needs at least two pairs, got {len(pairs)}")
    hand, eye = pair_arrays(pairs)
    keep = np.ones(len(pairs), dtype=bool)
    weights = np.ones(len(pairs))
    if cfg.robust_kernel:
        consistency, keep = screw_consistency_arrays(hand, eye)
        if not keep.all():
            logger.warning("Dropped %d degenerate pairs with vanishing rotation scalar part", int((~keep).sum()))
        weights = robust_weight(consistency[keep], cfg.mu)
        hand, eye = hand[keep], eye[keep]
    if len(hand) < 2:
        raise NoPairs("fewer than two non-degenerate pairs remain")
    data = _PairData(hand, eye, coefficient_blocks(hand, eye), np.atleast_1d(weights))
    best, _ = _run_ransac(data, cfg, weighted=cfg.robust_kernel, select="ratio")
    result = _finish(best, data, cfg, dt, "robust")
    mask = np.zeros(len(pairs), dtype=bool)
    mask[np.flatnonzero(keep)] = result.inlier_mask
    return replace(result, inlier_mask=mask)


def ransac_classic_calibrate(pairs: Sequence[RelativePosePair], cfg: Optional[RansacSettings] = None,
                             dt: float = 0.0) -> CalibrationResult:
    """Classic RANSAC: largest consensus set, unweighted re-solve."""
    cfg = cfg or RansacSettings()
    if len(pairs) < 2:
        raise NoPairs(f"RANSAC needs at least two pairs, got {len(pairs)}")
    hand, eye = pair_arrays(pairs)
    data = _PairData(hand, eye, coefficient_blocks(hand, eye), np.ones(len(pairs)))
    best, _ = _run_ransac(data, cfg, weighted=False, select="count")
    return _finish(best, data, cfg, dt, "rc")


def scalar_consistent(pairs: Sequence[RelativePosePair], tolerance: float) -> np.ndarray:
    hand, eye = pair_arrays(pairs)
    return ((np.abs(np.abs(hand[:, 0]) - np.abs(eye[:, 0])) < tolerance)
            & (np.abs(np.abs(hand[:, 4]) - np.abs(eye[:, 4])) < tolerance))


def ransac_scalar_calibrate(pairs: Sequence[RelativePosePair], cfg: Optional[RansacSettings] = None,
                            dt: float = 0.0) -> CalibrationResult:
    """Scalar-part prefilter followed by classic RANSAC; the mask covers all input pairs."""
    cfg = cfg or RansacSettings()
    keep = scalar_consistent(pairs, cfg.scalar_tolerance)
    kept = [pair for pair, ok in zip(pairs, keep) if ok]
    logger.info("Scalar prefilter kept %d of %d pairs", len(kept), len(pairs))
    result = ransac_classic_calibrate(kept, cfg, dt)
    mask = np.zeros(len(pairs), dtype=bool)
    mask[np.flatnonzero(keep)] = result.inlier_mask
    return replace(result, inlier_mask=mask, solver="rs")


SOLVERS = {
    "robust": ransac_calibrate,
    "rc": ransac_classic_calibrate,
    "rs": ransac_scalar_calibrate,
}


def calibrate_pairs(pairs: Sequence[RelativePosePair], cfg: Optional[RansacSettings] = None,
                    dt: float = 0.0) -> CalibrationResult:
    cfg = cfg or RansacSettings()
    return SOLVERS[cfg.solver](pairs, cfg, dt)


def pair_diagnostics(pairs: Sequence[RelativePosePair], result: CalibrationResult,
                     mu: Optional[float] = None) -> List[Dict[str, object]]:
    """One row per pair for the diagnostics CSV; weights are reported when ``mu`` is given."""
    hand, eye = pair_arrays(pairs)
    angle, norm = residual_arrays(result.extrinsic, hand, eye)
    consistency, valid = screw_consistency_arrays(hand, eye)
    rows = []
    for k, pair in enumerate(pairs):
        rows.append({
            "i": pair.i,
            "j": pair.j,
            "hand_angle_deg": float(np.degrees(quat_angles(hand[k, :4]))),
            "eye_angle_deg": float(np.degrees(quat_angles(eye[k, :4]))),
            "consistency": float(consistency[k]) if valid[k] else float("nan"),
            "weight": float(robust_weight(consistency[k], mu)) if (mu and valid[k]) else pair.weight,
            "residual_rot_deg": float(np.degrees(angle[k])),
            "residual_trans_m": float(norm[k]),
            "inlier": bool(result.inlier_mask[k]) if k < len(result.inlier_mask) else False,
        })
    return rows
