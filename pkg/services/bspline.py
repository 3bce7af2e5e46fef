"""
B-spline Pose Model
Uniform cumulative B-spline on SO(3) x R^3 with least-squares fitting to a trajectory.

Knots are uniform: t_j = t0 + (j - (order - 1)) * spacing for j = 0 .. V + order - 1,
so the valid domain is [t0, t0 + (V - order + 1) * spacing]. Times are relative
to ``epoch`` like Trajectory times.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.interpolate import BSpline
from scipy.sparse.linalg import spsolve

from .errors import OutOfDomain, SpanTooShort
from .screw_algebra import Quat, quat_angles, quat_conjugate, quat_exp, quat_log, quat_multiply
from .trajectory_io import Trajectory

logger = logging.getLogger(__name__)

DOMAIN_TOLERANCE = 1e-9
FIT_SWEEPS = 5
JACOBIAN_STEP = 1e-6


@dataclass(frozen=True)
class SplinePose:
    order: int
    t0: float
    spacing: float
    rot_vertices: np.ndarray
    trans_vertices: np.ndarray
    epoch: float = 0.0
    fit_max_trans: float = 0.0
    fit_max_rot: float = 0.0

    def __post_init__(self):
        rot = np.array(self.rot_vertices, dtype=float).reshape(-1, 4)
        trans = np.array(self.trans_vertices, dtype=float).reshape(-1, 3)
        if self.order < 2:
            raise ValueError("spline order must be at least 2")
        if len(rot) != len(trans):
            raise ValueError("rotation and translation vertex counts differ")
        if len(rot) < self.order:
            raise ValueError(f"order {self.order} needs at least {self.order} vertices, got {len(rot)}")
        rot = rot / np.linalg.norm(rot, axis=1, keepdims=True)
        object.__setattr__(self, "rot_vertices", align_signs(rot))
        object.__setattr__(self, "trans_vertices", trans)

    @property
    def num_vertices(self) -> int:
        return len(self.rot_vertices)

    @property
    def degree(self) -> int:
        return self.order - 1

    @property
    def knots(self) -> np.ndarray:
        j = np.arange(self.num_vertices + self.order)
        return self.t0 + (j - (self.order - 1)) * self.spacing

    @property
    def domain(self) -> Tuple[float, float]:
        return self.t0, self.t0 + (self.num_vertices - self.order + 1) * self.spacing

    def with_vertices(self, rot_vertices=None, trans_vertices=None) -> "SplinePose":
        return replace(
            self,
            rot_vertices=self.rot_vertices if rot_vertices is None else rot_vertices,
            trans_vertices=self.trans_vertices if trans_vertices is None else trans_vertices,
        )

    def contains(self, times) -> np.ndarray:
        lo, hi = self.domain
        times = np.asarray(times, dtype=float)
        return (times >= lo - DOMAIN_TOLERANCE) & (times <= hi + DOMAIN_TOLERANCE)

    def _checked(self, times) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        inside = self.contains(times)
        if not inside.all():
            bad = times[~inside]
            lo, hi = self.domain
            raise OutOfDomain(f"{len(bad)} times outside spline domain [{lo:.6f}, {hi:.6f}], "
                              f"first {bad[0]:.6f}", t=float(bad[0]))
        lo, hi = self.domain
        return np.clip(times, lo, hi)

    def segments(self, times) -> np.ndarray:
        """Index of the first vertex influencing each time."""
        times = self._checked(times)
        s = np.floor((times - self.t0) / self.spacing).astype(int)
        return np.clip(s, 0, self.num_vertices - self.order)

    def basis(self, times) -> np.ndarray:
        """Dense (m, V) matrix of basis values; rows sum to one."""
        times = self._checked(times)
        matrix = BSpline.design_matrix(times, self.knots, self.degree)
        return matrix.toarray()

    def cumulative_basis(self, times) -> np.ndarray:
        basis = self.basis(times)
        return np.cumsum(basis[:, ::-1], axis=1)[:, ::-1]

    def vertex_logs(self) -> np.ndarray:
        """(V - 1, 3) rotation vectors Log(q_{j-1}^-1 q_j)."""
        rot = self.rot_vertices
        return quat_log(quat_multiply(quat_conjugate(rot[:-1]), rot[1:]))

    def evaluate(self, times, basis: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Rotations (m, 4) and translations (m, 3) at epoch-relative times.

        ``basis`` may carry a precomputed basis(times) for repeated evaluation.
        """
        times = self._checked(times)
        if basis is None:
            basis = self.basis(times)
        translations = basis @ self.trans_vertices

        cumulative = np.cumsum(basis[:, ::-1], axis=1)[:, ::-1]
        s = self.segments(times)
        logs = self.vertex_logs()
        rows = np.arange(len(times))
        rotations = self.rot_vertices[s]
        for offset in range(1, self.order):
            j = s + offset
            weights = cumulative[rows, j]
            rotations = quat_multiply(rotations, quat_exp(weights[:, None] * logs[j - 1]))
        return rotations, translations


def align_signs(rotations: np.ndarray) -> np.ndarray:
    """Flip quaternions so consecutive entries have a nonnegative dot product."""
    rotations = np.array(rotations, dtype=float)
    dots = np.einsum("ij,ij->i", rotations[1:], rotations[:-1])
    flips = np.concatenate([[1.0], np.where(dots < 0.0, -1.0, 1.0)])
    return rotations * np.cumprod(flips)[:, None]


def spline_eval(spline: SplinePose, t: float) -> Tuple[Quat, np.ndarray]:
    rotations, translations = spline.evaluate([t])
    return Quat.from_array(rotations[0]), translations[0]


def perturb_rotations(rotations: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Right perturbation q_j * Exp(delta_j)."""
    return quat_multiply(rotations, quat_exp(delta))


def colored_jacobian(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    num_vertices: int,
    block_size: int,
    windows: np.ndarray,
    dof: int = 3,
    step: float = JACOBIAN_STEP,
) -> sparse.csr_matrix:
    """Sparse central-difference Jacobian over per-vertex parameters.

    ``residual_fn(delta)`` evaluates all residual blocks for a (num_vertices, dof)
    perturbation. Block b occupies rows [b * block_size, (b + 1) * block_size)
    and depends only on vertices windows[b, 0] .. windows[b, 1]. Vertices that
    never share a block are perturbed together.
    """
    windows = np.asarray(windows, dtype=int).reshape(-1, 2)
    group = int((windows[:, 1] - windows[:, 0]).max()) + 1 if len(windows) else 1
    rows, cols, values = [], [], []
    block_rows = np.arange(block_size)
    for color in range(group):
        members = np.arange(color, num_vertices, group)
        if members.size == 0:
            continue
        # The one vertex of this color inside each block window
        offset = (color - windows[:, 0]) % group
        vertex = windows[:, 0] + offset
        touched = np.flatnonzero(vertex <= windows[:, 1])
        for axis in range(dof):
            delta = np.zeros((num_vertices, dof))
            delta[members, axis] = step
            plus = residual_fn(delta).reshape(-1, block_size)
            minus = residual_fn(-delta).reshape(-1, block_size)
            derivative = (plus - minus) / (2.0 * step)
            rows.append((touched[:, None] * block_size + block_rows).ravel())
            cols.append(np.repeat(vertex[touched] * dof + axis, block_size))
            values.append(derivative[touched].ravel())
    shape = (len(windows) * block_size, num_vertices * dof)
    if not rows:
        return sparse.csr_matrix(shape)
    return sparse.csr_matrix((np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))), shape=shape)


def _rotation_fit_residuals(spline: SplinePose, times: np.ndarray, observed: np.ndarray,
                            delta: Optional[np.ndarray] = None) -> np.ndarray:
    if delta is not None:
        spline = spline.with_vertices(rot_vertices=perturb_rotations(spline.rot_vertices, delta))
    rotations, _ = spline.evaluate(times)
    return quat_log(quat_multiply(quat_conjugate(observed), rotations)).reshape(-1)


def fit_spline(traj: Trajectory, order: int = 4, knot_spacing: float = 0.1) -> SplinePose:
    """Fit a uniform B-spline whose domain starts at the first sample and covers the trajectory.

    Translation vertices come from linear least squares. Rotation vertices start
    at the samples nearest their basis centres and are polished by Gauss-Newton
    sweeps on geodesic residuals.
    """
    span = traj.duration
    if span < 2 * order * knot_spacing:
        raise SpanTooShort(f"span {span:.3f}s is shorter than {2 * order} knot intervals "
                           f"of {knot_spacing}s")
    segments = int(np.ceil(span / knot_spacing - 1e-9))
    num_vertices = segments + order - 1
    t0 = float(traj.times[0])
    times = np.asarray(traj.times)

    centres = t0 + (np.arange(num_vertices) - (order - 1) + order / 2.0) * knot_spacing
    nearest = np.clip(np.searchsorted(times, centres), 0, len(times) - 1)
    previous = np.clip(nearest - 1, 0, len(times) - 1)
    nearest = np.where(np.abs(times[previous] - centres) < np.abs(times[nearest] - centres), previous, nearest)

    spline = SplinePose(
        order=order,
        t0=t0,
        spacing=knot_spacing,
        rot_vertices=traj.rotations[nearest],
        trans_vertices=traj.translations[nearest],
        epoch=traj.epoch,
    )
    basis = spline.basis(times)
    trans_vertices, *_ = np.linalg.lstsq(basis, traj.translations, rcond=None)
    spline = spline.with_vertices(trans_vertices=trans_vertices)

    s = spline.segments(times)
    windows = np.stack([s, s + order - 1], axis=1)
    observed = traj.rotations
    for sweep in range(FIT_SWEEPS):
        residual = _rotation_fit_residuals(spline, times, observed)
        jacobian = colored_jacobian(
            lambda delta: _rotation_fit_residuals(spline, times, observed, delta),
            spline.num_vertices, 3, windows,
        )
        normal = (jacobian.T @ jacobian).tocsc()
        damping = 1e-9 * max(float(normal.diagonal().max()), 1.0)
        step = spsolve(normal + damping * sparse.identity(normal.shape[0], format="csc"), -(jacobian.T @ residual))
        spline = spline.with_vertices(rot_vertices=perturb_rotations(spline.rot_vertices, step.reshape(-1, 3)))
        if np.max(np.abs(step)) < 1e-12:
            break

    rotations, translations = spline.evaluate(times)
    fit_trans = float(np.max(np.linalg.norm(translations - traj.translations, axis=1)))
    fit_rot = float(np.max(quat_angles(quat_multiply(quat_conjugate(observed), rotations))))
    logger.info("Fitted order-%d spline with %d vertices: max residual %.3g m / %.3g deg",
                order, spline.num_vertices, fit_trans, np.degrees(fit_rot))
    return replace(spline, fit_max_trans=fit_trans, fit_max_rot=fit_rot)


def windows_for(spline: SplinePose, times_a: Sequence[float], times_b: Sequence[float]) -> np.ndarray:
    """Vertex windows of residuals that evaluate the spline at two times each."""
    sa = spline.segments(times_a)
    sb = spline.segments(times_b)
    lo = np.minimum(sa, sb)
    hi = np.maximum(sa, sb) + spline.order - 1
    return np.stack([lo, hi], axis=1)
