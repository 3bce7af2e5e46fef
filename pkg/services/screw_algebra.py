"""
Screw Algebra
Quaternion, dual quaternion and screw-parameter algebra shared by every service.

Quaternions are Hamiltonian and stored scalar-first (w, x, y, z). A unit dual
quaternion (std, dual) encodes a rigid transform (R, t) with dual = 1/2 t * std,
so composing a * b means "transform a followed in-frame by b" (T_a T_b).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import NonUnitRotation

UNIT_TOLERANCE = 1e-6
DEGENERATE_ANGLE = 1e-6
DUAL_EPSILON = 1e-9


# ---------------------------------------------------------------------------
# Array-level helpers, vectorized over leading axes
# ---------------------------------------------------------------------------

def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of (..., 4) scalar-first quaternion arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=float) * np.array([1.0, -1.0, -1.0, -1.0])


def pure_quat(v: np.ndarray) -> np.ndarray:
    """Embed (..., 3) vectors as pure quaternions."""
    v = np.asarray(v, dtype=float)
    return np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)


def canonical_sign(q: np.ndarray) -> np.ndarray:
    """Sign (+1/-1) that makes w >= 0; w == 0 ties go to the first nonzero of x, y, z."""
    q = np.asarray(q, dtype=float)
    sign = np.sign(q[..., 0])
    for k in (1, 2, 3):
        sign = np.where(sign == 0, np.sign(q[..., k]), sign)
    return np.where(sign == 0, 1.0, sign)


def canonicalize_quats(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * canonical_sign(q)[..., None]


def quat_to_rotation(q: np.ndarray) -> Rotation:
    q = np.asarray(q, dtype=float)
    return Rotation.from_quat(q[..., [1, 2, 3, 0]])


def quat_from_rotation(rotation: Rotation) -> np.ndarray:
    return canonicalize_quats(rotation.as_quat()[..., [3, 0, 1, 2]])


def quat_exp(rotvec: np.ndarray) -> np.ndarray:
    """Rotation vector (rad) to unit quaternion."""
    return quat_from_rotation(Rotation.from_rotvec(np.asarray(rotvec, dtype=float)))


def quat_log(q: np.ndarray) -> np.ndarray:
    """Unit quaternion to rotation vector on the short arc (angle in [0, pi])."""
    return quat_to_rotation(q).as_rotvec()


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return quat_to_rotation(q).apply(np.asarray(v, dtype=float))


def quat_angles(q: np.ndarray) -> np.ndarray:
    """Rotation angle in [0, pi] of (..., 4) unit quaternions.

    Uses 2*atan2(|v|, |w|), which equals 2*arccos(|w|) for unit quaternions
    without losing precision near zero.
    """
    q = np.asarray(q, dtype=float)
    return 2.0 * np.arctan2(np.linalg.norm(q[..., 1:], axis=-1), np.abs(q[..., 0]))


def dq_multiply_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dual quaternion product of (..., 8) arrays laid out [std | dual]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    std = quat_multiply(a[..., :4], b[..., :4])
    dual = quat_multiply(a[..., :4], b[..., 4:]) + quat_multiply(a[..., 4:], b[..., :4])
    return np.concatenate([std, dual], axis=-1)


def dq_conjugate_arrays(a: np.ndarray) -> np.ndarray:
    """Quaternion conjugate of both parts; the inverse of a unit dual quaternion."""
    a = np.asarray(a, dtype=float)
    return np.concatenate([quat_conjugate(a[..., :4]), quat_conjugate(a[..., 4:])], axis=-1)


def dq_canonicalize_arrays(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a * canonical_sign(a[..., :4])[..., None]


def dq_from_rt_arrays(q: np.ndarray, t: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    dual = 0.5 * quat_multiply(pure_quat(t), q)
    return np.concatenate([q, dual], axis=-1)


def dq_to_rt_arrays(a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    t = 2.0 * quat_multiply(a[..., 4:], quat_conjugate(a[..., :4]))[..., 1:]
    return a[..., :4], t


def dq_translation_norms(a: np.ndarray) -> np.ndarray:
    return np.linalg.norm(dq_to_rt_arrays(a)[1], axis=-1)


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Quat:
    """Hamiltonian quaternion, scalar first"""

    w: float
    x: float
    y: float
    z: float

    @classmethod
    def identity(cls) -> "Quat":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, values) -> "Quat":
        w, x, y, z = (float(v) for v in np.asarray(values, dtype=float).reshape(4))
        return cls(w, x, y, z)

    @classmethod
    def from_rotvec(cls, rotvec) -> "Quat":
        return cls.from_array(quat_exp(rotvec))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Quat":
        axis = np.asarray(axis, dtype=float)
        return cls.from_rotvec(axis / np.linalg.norm(axis) * angle)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    def is_unit(self, tolerance: float = UNIT_TOLERANCE) -> bool:
        return abs(self.norm - 1.0) <= tolerance

    def normalized(self) -> "Quat":
        return Quat.from_array(self.as_array() / self.norm)

    def canonical(self) -> "Quat":
        return Quat.from_array(canonicalize_quats(self.as_array()))

    def conjugate(self) -> "Quat":
        return Quat(self.w, -self.x, -self.y, -self.z)

    def inverse(self) -> "Quat":
        return Quat.from_array(self.conjugate().as_array() / self.norm ** 2)

    def rotate(self, v) -> np.ndarray:
        return quat_rotate(self.as_array(), v)

    def __mul__(self, other: "Quat") -> "Quat":
        if not isinstance(other, Quat):
            return NotImplemented
        return Quat.from_array(quat_multiply(self.as_array(), other.as_array()))

    def __neg__(self) -> "Quat":
        return Quat(-self.w, -self.x, -self.y, -self.z)


@dataclass(frozen=True)
class DualQuat:
    """Unit dual quaternion q + eps*q' encoding one rigid transform"""

    std: Quat
    dual: Quat

    @classmethod
    def identity(cls) -> "DualQuat":
        return cls(Quat.identity(), Quat(0.0, 0.0, 0.0, 0.0))

    @classmethod
    def from_array(cls, values, restore: bool = True) -> "DualQuat":
        """Build from an 8-vector [std | dual]; restore renormalizes and canonicalizes."""
        values = np.asarray(values, dtype=float).reshape(8)
        if restore:
            values = _restore_invariants(values)
        return cls(Quat.from_array(values[:4]), Quat.from_array(values[4:]))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.std.as_array(), self.dual.as_array()])

    @property
    def rotation(self) -> Quat:
        return self.std

    @property
    def translation(self) -> np.ndarray:
        return dq_to_rt(self)[1]

    def canonical(self) -> "DualQuat":
        return DualQuat.from_array(dq_canonicalize_arrays(self.as_array()), restore=False)

    def inverse(self) -> "DualQuat":
        return dq_inverse(self)

    def transform_point(self, p) -> np.ndarray:
        return self.std.rotate(p) + self.translation

    def as_matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix of the transform."""
        matrix = np.eye(4)
        matrix[:3, :3] = quat_to_rotation(self.std.as_array()).as_matrix()
        matrix[:3, 3] = self.translation
        return matrix

    def __mul__(self, other: "DualQuat") -> "DualQuat":
        if not isinstance(other, DualQuat):
            return NotImplemented
        return dq_compose(self, other)

    def __neg__(self) -> "DualQuat":
        return DualQuat(-self.std, -self.dual)


@dataclass(frozen=True)
class ScrewParams:
    """Screw decomposition of a rigid motion"""

    theta: float
    d: float
    axis: np.ndarray
    moment: np.ndarray
    degenerate: bool = False


def _restore_invariants(values: np.ndarray) -> np.ndarray:
    """Renormalize the standard part, project the dual part onto the Pluecker condition, fix the sign."""
    std = values[:4]
    dual = values[4:]
    norm = np.linalg.norm(std)
    std = std / norm
    dual = dual / norm
    dual = dual - np.dot(std, dual) * std
    return dq_canonicalize_arrays(np.concatenate([std, dual]))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def dq_compose(a: DualQuat, b: DualQuat) -> DualQuat:
    return DualQuat.from_array(dq_multiply_arrays(a.as_array(), b.as_array()))


def dq_inverse(a: DualQuat) -> DualQuat:
    """Full dual quaternion inverse; equals the conjugate for unit elements."""
    std = a.std.as_array()
    std_inv = quat_conjugate(std) / np.dot(std, std)
    dual_inv = -quat_multiply(quat_multiply(std_inv, a.dual.as_array()), std_inv)
    return DualQuat.from_array(np.concatenate([std_inv, dual_inv]))


def dq_from_rt(rotation: Quat, translation) -> DualQuat:
    if not rotation.is_unit():
        raise NonUnitRotation(f"rotation quaternion has norm {rotation.norm:.9f}")
    q = rotation.normalized().as_array()
    return DualQuat.from_array(dq_from_rt_arrays(q, np.asarray(translation, dtype=float).reshape(3)))


def dq_to_rt(a: DualQuat) -> Tuple[Quat, np.ndarray]:
    q, t = dq_to_rt_arrays(a.as_array())
    return Quat.from_array(q), t


def scalar_part(a: DualQuat) -> Tuple[float, float]:
    """(omega, omega') = (cos(theta/2), -(d/2) sin(theta/2))."""
    return a.std.w, a.dual.w


def rotation_angle(a: DualQuat) -> float:
    return float(quat_angles(a.std.as_array()))


def translation_norm(a: DualQuat) -> float:
    return float(np.linalg.norm(a.translation))


def screw_decompose(a: DualQuat) -> ScrewParams:
    values = dq_canonicalize_arrays(a.as_array())
    std, dual = values[:4], values[4:]
    theta = float(quat_angles(std))
    if theta < DEGENERATE_ANGLE:
        # Pure translation: the screw axis is the translation direction at infinity
        t = dq_to_rt_arrays(values)[1]
        d = float(np.linalg.norm(t))
        axis = t / d if d > DUAL_EPSILON else np.zeros(3)
        return ScrewParams(theta=theta, d=d, axis=axis, moment=np.zeros(3), degenerate=True)

    half_sin = np.sin(theta / 2.0)
    half_cos = np.cos(theta / 2.0)
    axis = std[1:] / np.linalg.norm(std[1:])
    d = float(-2.0 * dual[0] / half_sin)
    moment = (dual[1:] - 0.5 * d * half_cos * axis) / half_sin
    return ScrewParams(theta=theta, d=d, axis=axis, moment=moment)


def dq_from_screw(params: ScrewParams) -> DualQuat:
    half = params.theta / 2.0
    std = np.concatenate([[np.cos(half)], np.sin(half) * params.axis])
    dual = np.concatenate([
        [-0.5 * params.d * np.sin(half)],
        np.sin(half) * params.moment + 0.5 * params.d * np.cos(half) * params.axis,
    ])
    return DualQuat.from_array(np.concatenate([std, dual]))
