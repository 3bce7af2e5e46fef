"""
Batch Refinement
Joint refinement of the clock offset and the hand-eye extrinsic against a
continuous-time B-spline model of the hand trajectory.

The cost sums Huber-robustified, covariance-weighted relative residuals over
consecutive hand observations and consecutive eye observations; the eye pose at
eye time t_e is modeled as spline(t_e + dt) * X (t_hand = t_eye + dt).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .bspline import SplinePose, colored_jacobian, fit_spline, perturb_rotations, windows_for
from .errors import OutOfDomain
from .screw_algebra import (
    DualQuat,
    dq_conjugate_arrays,
    dq_from_rt_arrays,
    dq_multiply_arrays,
    dq_to_rt_arrays,
    quat_log,
    quat_to_rotation,
)
from .trajectory_io import Trajectory

logger = logging.getLogger(__name__)

EXTRINSIC_STEP = 1e-7
TIME_STEP = 1e-6
INITIAL_DAMPING = 1e-3
MAX_DAMPING = 1e12
DIAGONAL_FLOOR = 1e-12
NEGLIGIBLE_COST = 1e-24
NEGLIGIBLE_BLOCK_COST = 1e-12

JACOBIAN_MODES = {
    "rotation_vertices": "numeric (grouped central differences)",
    "translation_vertices": "analytic",
    "extrinsic": "numeric (central differences)",
    "dt": "numeric (central differences)",
}


@dataclass(frozen=True)
class RefinementSettings:
    """Spline, noise model and solver limits of one refinement; angles in radians"""

    order: int = 4
    knot_spacing: float = 0.1
    huber_delta_rot: float = math.radians(0.5)
    huber_delta_trans: float = 0.02
    sigma_hand_rot: float = 1e-3
    sigma_hand_trans: float = 1e-3
    eye_covariance_factor: float = 10.0
    max_iterations: int = 100
    function_tolerance: float = 1e-9
    gradient_tolerance: float = 1e-10
    max_boundary_drop: float = 0.02


# ---------------------------------------------------------------------------
# Residuals
# ---------------------------------------------------------------------------

def _relative_residual_arrays(model_a: np.ndarray, model_b: np.ndarray,
                              observed_a: np.ndarray, observed_b: np.ndarray) -> np.ndarray:
    """(n, 6) [rotation vector, translation] of (A^-1 B) * (A_obs^-1 B_obs)^-1 for (n, 8) inputs."""
    model = dq_multiply_arrays(dq_conjugate_arrays(model_a), model_b)
    observed = dq_multiply_arrays(dq_conjugate_arrays(observed_a), observed_b)
    return _discrepancy(model, observed)


def _discrepancy(model: np.ndarray, observed: np.ndarray) -> np.ndarray:
    q, t = dq_to_rt_arrays(dq_multiply_arrays(model, dq_conjugate_arrays(observed)))
    return np.concatenate([quat_log(q), t], axis=-1)


def relative_residual(Ta: DualQuat, Tb: DualQuat, Ta_obs: DualQuat, Tb_obs: DualQuat) -> np.ndarray:
    """6-vector discrepancy between model and observed relative motion.

    Zero whenever model and observation differ only by one shared left-multiplied
    transform. The translation part is that of the composed discrepancy, in metres.
    """
    arrays = [pose.as_array()[None] for pose in (Ta, Tb, Ta_obs, Tb_obs)]
    return _relative_residual_arrays(*arrays)[0]


def huber(squared: np.ndarray, delta) -> np.ndarray:
    """Huber loss on a squared norm: s below delta^2, 2 delta sqrt(s) - delta^2 above."""
    squared = np.asarray(squared, dtype=float)
    norm = np.sqrt(squared)
    return np.where(norm <= delta, squared, 2.0 * delta * norm - delta * delta)


def huber_weights(squared: np.ndarray, delta) -> np.ndarray:
    norm = np.sqrt(np.asarray(squared, dtype=float))
    return np.where(norm <= delta, 1.0, delta / np.maximum(norm, DIAGONAL_FLOOR))


# ---------------------------------------------------------------------------
# Problem
# ---------------------------------------------------------------------------

@dataclass
class RefinementState:
    rot_vertices: np.ndarray
    trans_vertices: np.ndarray
    x_rotation: np.ndarray
    x_translation: np.ndarray
    dt: float

    @property
    def extrinsic(self) -> DualQuat:
        return DualQuat.from_array(dq_from_rt_arrays(self.x_rotation, self.x_translation))

    def extrinsic_array(self) -> np.ndarray:
        return dq_from_rt_arrays(self.x_rotation, self.x_translation)


@dataclass
class ConvergenceReport:
    iterations: int
    initial_cost: float
    final_cost: float
    status: str
    reason: str
    hand_residuals: int
    eye_residuals: int
    dropped_eye_pairs: int
    jacobian_modes: Dict[str, str] = field(default_factory=lambda: dict(JACOBIAN_MODES))
    cost_history: list = field(default_factory=list)


class RefinementResult(NamedTuple):
    extrinsic: DualQuat
    dt: float
    spline: SplinePose
    report: ConvergenceReport


class RefinementProblem:
    """Observations, spline model, extrinsic and clock offset with their noise model.

    ``cov_hand`` and ``cov_eye`` are the diagonals of the 6x6 residual
    covariances (rotation rad^2 first, then translation m^2).
    """

    def __init__(
        self,
        hand_obs: Trajectory,
        eye_obs: Trajectory,
        spline: SplinePose,
        extrinsic: DualQuat,
        dt: float,
        huber_delta_rot: float = math.radians(0.5),
        huber_delta_trans: float = 0.02,
        cov_hand=None,
        cov_eye=None,
        dt_margin: Optional[float] = None,
        max_boundary_drop: float = 0.02,
    ):
        self.hand_obs = hand_obs
        self.eye_obs = eye_obs
        self.spline = spline
        self.extrinsic = extrinsic
        self.dt0 = float(dt)
        self.huber_delta_rot = huber_delta_rot
        self.huber_delta_trans = huber_delta_trans
        self.cov_hand = np.asarray(cov_hand if cov_hand is not None else [1e-6] * 3 + [1e-6] * 3, dtype=float)
        self.cov_eye = np.asarray(cov_eye if cov_eye is not None else 10.0 * self.cov_hand, dtype=float)
        self.dt_margin = 0.5 * eye_obs.median_period if dt_margin is None else float(dt_margin)

        self._prepare_hand()
        self._prepare_eye(max_boundary_drop)

    @classmethod
    def from_settings(cls, hand_obs: Trajectory, eye_obs: Trajectory, extrinsic: DualQuat, dt: float,
                      settings: Optional[RefinementSettings] = None,
                      spline: Optional[SplinePose] = None) -> "RefinementProblem":
        settings = settings or RefinementSettings()
        if spline is None:
            spline = fit_spline(hand_obs, settings.order, settings.knot_spacing)
        cov_hand = np.array([settings.sigma_hand_rot ** 2] * 3 + [settings.sigma_hand_trans ** 2] * 3)
        return cls(
            hand_obs, eye_obs, spline, extrinsic, dt,
            huber_delta_rot=settings.huber_delta_rot,
            huber_delta_trans=settings.huber_delta_trans,
            cov_hand=cov_hand,
            cov_eye=settings.eye_covariance_factor * cov_hand,
            max_boundary_drop=settings.max_boundary_drop,
        )

    # -- setup -------------------------------------------------------------

    def _prepare_hand(self) -> None:
        times = self.hand_obs.rebased(self.spline.epoch).times
        inside = self.spline.contains(times)
        pair = inside[:-1] & inside[1:]
        a = np.flatnonzero(pair)
        self.hand_ta = times[a]
        self.hand_tb = times[a + 1]
        poses = self.hand_obs.dual_quaternions()
        self.hand_observed = dq_multiply_arrays(dq_conjugate_arrays(poses[a]), poses[a + 1])
        self.hand_basis_a = self.spline.basis(self.hand_ta)
        self.hand_basis_b = self.spline.basis(self.hand_tb)
        self.hand_windows = windows_for(self.spline, self.hand_ta, self.hand_tb)

    def _prepare_eye(self, max_boundary_drop: float) -> None:
        hand_lo = self.hand_obs.start - self.spline.epoch
        hand_hi = self.hand_obs.end - self.spline.epoch
        times = self.eye_obs.rebased(self.spline.epoch).times + self.dt0
        # Eye samples beyond the recorded hand span carry no hand information
        covered = (times >= hand_lo) & (times <= hand_hi)
        pair = covered[:-1] & covered[1:]

        lo, hi = self.spline.domain
        reach = self.dt_margin + 10.0 * TIME_STEP
        safe = (times - reach >= lo) & (times + reach <= hi)
        usable = pair & safe[:-1] & safe[1:]
        dropped = int(pair.sum() - usable.sum())
        if pair.sum() == 0 or usable.sum() == 0:
            raise OutOfDomain("no eye observation pair lies inside the spline domain")
        fraction = dropped / float(pair.sum())
        if fraction > max_boundary_drop:
            raise OutOfDomain(f"{dropped} of {int(pair.sum())} eye pairs fall outside the spline domain "
                              f"({fraction:.1%} > {max_boundary_drop:.1%})")
        if dropped:
            logger.warning("Dropped %d boundary eye pairs outside the spline domain", dropped)

        a = np.flatnonzero(usable)
        self.eye_ta = times[a] - self.dt0
        self.eye_tb = times[a + 1] - self.dt0
        poses = self.eye_obs.dual_quaternions()
        self.eye_observed = dq_multiply_arrays(dq_conjugate_arrays(poses[a]), poses[a + 1])
        self.dropped_eye_pairs = dropped
        self.cropped_eye_pairs = int(len(pair) - pair.sum())

    # -- evaluation ----------------------------------------------------------

    def initial_state(self) -> RefinementState:
        q, t = dq_to_rt_arrays(self.extrinsic.as_array())
        return RefinementState(
            rot_vertices=self.spline.rot_vertices.copy(),
            trans_vertices=self.spline.trans_vertices.copy(),
            x_rotation=q.copy(),
            x_translation=t.copy(),
            dt=self.dt0,
        )

    def spline_for(self, state: RefinementState) -> SplinePose:
        return self.spline.with_vertices(state.rot_vertices, state.trans_vertices)

    def eye_bases(self, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        return self.spline.basis(self.eye_ta + dt), self.spline.basis(self.eye_tb + dt)

    def raw_residuals(self, state: RefinementState, eye_bases=None) -> Tuple[np.ndarray, np.ndarray]:
        """Unwhitened (n_h, 6) hand and (n_e, 6) eye residuals."""
        spline = self.spline_for(state)
        hand_a = dq_from_rt_arrays(*spline.evaluate(self.hand_ta, self.hand_basis_a))
        hand_b = dq_from_rt_arrays(*spline.evaluate(self.hand_tb, self.hand_basis_b))
        model = dq_multiply_arrays(dq_conjugate_arrays(hand_a), hand_b)
        hand = _discrepancy(model, self.hand_observed)

        basis_a, basis_b = eye_bases if eye_bases is not None else self.eye_bases(state.dt)
        x = state.extrinsic_array()
        eye_a = dq_multiply_arrays(dq_from_rt_arrays(*spline.evaluate(self.eye_ta + state.dt, basis_a)), x)
        eye_b = dq_multiply_arrays(dq_from_rt_arrays(*spline.evaluate(self.eye_tb + state.dt, basis_b)), x)
        eye = _discrepancy(dq_multiply_arrays(dq_conjugate_arrays(eye_a), eye_b), self.eye_observed)
        return hand, eye

    def whitened(self, state: RefinementState, eye_bases=None) -> np.ndarray:
        """(n_h + n_e, 6) residual blocks scaled by the inverse standard deviations."""
        hand, eye = self.raw_residuals(state, eye_bases)
        return np.concatenate([hand / np.sqrt(self.cov_hand), eye / np.sqrt(self.cov_eye)])

    def _deltas(self) -> np.ndarray:
        """Per-block Huber thresholds in whitened units, columns (rotation, translation)."""
        n_h, n_e = len(self.hand_ta), len(self.eye_ta)

        def scaled(cov: np.ndarray) -> np.ndarray:
            return np.array([self.huber_delta_rot / np.sqrt(cov[:3].mean()),
                             self.huber_delta_trans / np.sqrt(cov[3:].mean())])

        return np.concatenate([np.tile(scaled(self.cov_hand), (n_h, 1)), np.tile(scaled(self.cov_eye), (n_e, 1))])

    def robust_terms(self, whitened: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Huber cost per (block, sub-block) and IRLS weights."""
        deltas = self._deltas()
        squared = np.stack([np.sum(whitened[:, :3] ** 2, axis=1), np.sum(whitened[:, 3:] ** 2, axis=1)], axis=1)
        costs = huber(squared, deltas)
        weights = huber_weights(squared, deltas)
        return costs, weights

    def cost(self, state: RefinementState, eye_bases=None) -> float:
        costs, _ = self.robust_terms(self.whitened(state, eye_bases))
        return math.fsum(costs.ravel())

    # -- jacobian ------------------------------------------------------------

    @property
    def block_count(self) -> int:
        return len(self.hand_ta) + len(self.eye_ta)

    @property
    def num_vertices(self) -> int:
        return self.spline.num_vertices

    @property
    def parameter_count(self) -> int:
        free = self.num_vertices - 1
        return 6 * free + 7

    def translation_jacobian(self, state: RefinementState) -> sparse.csr_matrix:
        """Analytic d(whitened residual)/d(translation vertices), vertex 0 included."""
        spline = self.spline_for(state)
        rot_a, _ = spline.evaluate(self.hand_ta, self.hand_basis_a)
        hand_blocks = quat_to_rotation(rot_a).inv().as_matrix()
        hand_coeff = self.hand_basis_b - self.hand_basis_a

        basis_a, basis_b = self.eye_bases(state.dt)
        eye_rot_a, _ = spline.evaluate(self.eye_ta + state.dt, basis_a)
        x_inv = quat_to_rotation(state.x_rotation).inv().as_matrix()
        eye_blocks = x_inv[None] @ quat_to_rotation(eye_rot_a).inv().as_matrix()
        eye_coeff = basis_b - basis_a

        scale_hand = 1.0 / np.sqrt(self.cov_hand[3:])
        scale_eye = 1.0 / np.sqrt(self.cov_eye[3:])
        parts = [
            _block_jacobian(hand_blocks * scale_hand[None, :, None], hand_coeff, 0),
            _block_jacobian(eye_blocks * scale_eye[None, :, None], eye_coeff, len(self.hand_ta)),
        ]
        rows = np.concatenate([p[0] for p in parts])
        cols = np.concatenate([p[1] for p in parts])
        values = np.concatenate([p[2] for p in parts])
        n_blocks = len(self.hand_ta) + len(self.eye_ta)
        return sparse.csr_matrix((values, (rows, cols)), shape=(6 * n_blocks, 3 * self.num_vertices))

    def rotation_jacobian(self, state: RefinementState, eye_bases) -> sparse.csr_matrix:
        windows = np.concatenate([self.hand_windows, windows_for(self.spline, self.eye_ta + state.dt,
                                                                   self.eye_tb + state.dt)])

        def residual(delta: np.ndarray) -> np.ndarray:
            perturbed = RefinementState(perturb_rotations(state.rot_vertices, delta), state.trans_vertices,
                                        state.x_rotation, state.x_translation, state.dt)
            return self.whitened(perturbed, eye_bases).ravel()

        return colored_jacobian(residual, self.num_vertices, 6, windows)

    def extrinsic_time_jacobian(self, state: RefinementState, eye_bases) -> np.ndarray:
        """Dense (rows, 7) numeric Jacobian for the extrinsic (rotation, translation) and dt."""
        n_h = len(self.hand_ta)
        columns = []
        for k in range(6):
            delta = np.zeros(6)
            delta[k] = EXTRINSIC_STEP
            plus = self.whitened(_apply_extrinsic(state, delta), eye_bases)[n_h:]
            minus = self.whitened(_apply_extrinsic(state, -delta), eye_bases)[n_h:]
            columns.append(((plus - minus) / (2.0 * EXTRINSIC_STEP)).ravel())

        plus_state = _with_dt(state, state.dt + TIME_STEP)
        minus_state = _with_dt(state, state.dt - TIME_STEP)
        plus = self.whitened(plus_state)[n_h:]
        minus = self.whitened(minus_state)[n_h:]
        columns.append(((plus - minus) / (2.0 * TIME_STEP)).ravel())

        eye_part = np.stack(columns, axis=1)
        return np.vstack([np.zeros((6 * n_h, 7)), eye_part])

    def jacobian(self, state: RefinementState, eye_bases=None) -> sparse.csr_matrix:
        """Whitened Jacobian over the free parameters (vertex 0 held fixed)."""
        if eye_bases is None:
            eye_bases = self.eye_bases(state.dt)
        rotation = self.rotation_jacobian(state, eye_bases)[:, 3:]
        translation = self.translation_jacobian(state)[:, 3:]
        rest = sparse.csr_matrix(self.extrinsic_time_jacobian(state, eye_bases))
        return sparse.hstack([rotation, translation, rest], format="csr")

    def apply_step(self, state: RefinementState, step: np.ndarray) -> RefinementState:
        free = self.num_vertices - 1
        rot_delta = np.vstack([np.zeros((1, 3)), step[:3 * free].reshape(-1, 3)])
        trans_delta = np.vstack([np.zeros((1, 3)), step[3 * free:6 * free].reshape(-1, 3)])
        rest = step[6 * free:]
        updated = RefinementState(
            rot_vertices=perturb_rotations(state.rot_vertices, rot_delta),
            trans_vertices=state.trans_vertices + trans_delta,
            x_rotation=state.x_rotation,
            x_translation=state.x_translation,
            dt=float(np.clip(state.dt + rest[6], self.dt0 - self.dt_margin, self.dt0 + self.dt_margin)),
        )
        return _apply_extrinsic(updated, rest[:6])


def _block_jacobian(blocks: np.ndarray, coefficients: np.ndarray, first_block: int):
    """COO triplets for 3x3 blocks times basis coefficients, translation rows of each residual."""
    block_index, vertex = np.nonzero(coefficients)
    scale = coefficients[block_index, vertex]
    local = np.arange(3)
    rows = ((first_block + block_index)[:, None, None] * 6 + 3 + local[None, :, None]) + 0 * local[None, None, :]
    cols = (vertex[:, None, None] * 3 + local[None, None, :]) + 0 * local[None, :, None]
    values = blocks[block_index] * scale[:, None, None]
    return rows.ravel(), cols.ravel(), values.ravel()


def _apply_extrinsic(state: RefinementState, delta: np.ndarray) -> RefinementState:
    return RefinementState(
        rot_vertices=state.rot_vertices,
        trans_vertices=state.trans_vertices,
        x_rotation=perturb_rotations(state.x_rotation[None], np.asarray(delta[:3])[None])[0],
        x_translation=state.x_translation + np.asarray(delta[3:6]),
        dt=state.dt,
    )


def _with_dt(state: RefinementState, dt: float) -> RefinementState:
    return RefinementState(state.rot_vertices, state.trans_vertices, state.x_rotation, state.x_translation, dt)


def total_cost(problem: RefinementProblem, state: Optional[RefinementState] = None) -> float:
    """Robust negative log-likelihood of the problem at ``state`` (its initial values by default)."""
    return problem.cost(state or problem.initial_state())


# ---------------------------------------------------------------------------
# Levenberg-Marquardt
# ---------------------------------------------------------------------------

def refine(problem: RefinementProblem, max_iterations: int = 100, function_tolerance: float = 1e-9,
           gradient_tolerance: float = 1e-10) -> RefinementResult:
    """Levenberg-Marquardt with IRLS Huber weights over vertices, extrinsic and dt.

    Steps are accepted only when the cost decreases, so the result never costs
    more than the initialization. A run that cannot make progress from a
    non-stationary point is reported as stalled.
    """
    state = problem.initial_state()
    eye_bases = problem.eye_bases(state.dt)
    cost = problem.cost(state, eye_bases)
    initial_cost = cost
    history = [cost]
    damping = INITIAL_DAMPING
    status, reason = "max_iterations", f"reached {max_iterations} iterations"
    iterations = 0
    accepted_any = False

    for iterations in range(1, max_iterations + 1):
        if cost <= NEGLIGIBLE_BLOCK_COST * problem.block_count:
            status, reason = "converged", "cost negligible"
            iterations -= 1
            break

        whitened = problem.whitened(state, eye_bases)
        _, weights = problem.robust_terms(whitened)
        row_weights = np.sqrt(np.repeat(weights, 3, axis=1)).ravel()
        jacobian = sparse.diags(row_weights) @ problem.jacobian(state, eye_bases)
        residual = row_weights * whitened.ravel()

        gradient = jacobian.T @ residual
        if np.max(np.abs(gradient)) < gradient_tolerance:
            status, reason = "converged", "gradient below tolerance"
            iterations -= 1
            break

        normal = (jacobian.T @ jacobian).tocsc()
        diagonal = np.maximum(normal.diagonal(), DIAGONAL_FLOOR)
        improved = False
        while damping <= MAX_DAMPING:
            system = normal + sparse.diags(damping * diagonal + DIAGONAL_FLOOR, format="csc")
            step = spsolve(system, -gradient)
            if not np.all(np.isfinite(step)):
                damping *= 10.0
                continue
            candidate = problem.apply_step(state, step)
            candidate_bases = problem.eye_bases(candidate.dt)
            candidate_cost = problem.cost(candidate, candidate_bases)
            if candidate_cost < cost:
                decrease = (cost - candidate_cost) / max(cost, NEGLIGIBLE_COST)
                state, eye_bases, cost = candidate, candidate_bases, candidate_cost
                history.append(cost)
                damping = max(damping / 10.0, 1e-12)
                improved = True
                accepted_any = True
                break
            damping *= 10.0

        if not improved:
            small_gradient = np.linalg.norm(gradient) <= 1e-6 * (1.0 + cost)
            if accepted_any or small_gradient:
                status, reason = "converged", "no further decrease possible"
            else:
                status, reason = "stalled", "damping exhausted without a cost decrease"
            break
        if decrease < function_tolerance:
            status, reason = "converged", "relative cost decrease below tolerance"
            break

    report = ConvergenceReport(
        iterations=iterations,
        initial_cost=initial_cost,
        final_cost=cost,
        status=status,
        reason=reason,
        hand_residuals=len(problem.hand_ta),
        eye_residuals=len(problem.eye_ta),
        dropped_eye_pairs=problem.dropped_eye_pairs,
        cost_history=history,
    )
    logger.info("Refinement %s after %d iterations: cost %.6g -> %.6g (%s)",
                status, iterations, initial_cost, cost, reason)
    return RefinementResult(state.extrinsic, float(state.dt), problem.spline_for(state), report)


def refine_with_settings(problem: RefinementProblem, settings: Optional[RefinementSettings] = None) -> RefinementResult:
    settings = settings or RefinementSettings()
    return refine(problem, settings.max_iterations, settings.function_tolerance, settings.gradient_tolerance)

