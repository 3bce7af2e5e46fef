"""
Synthetic Generator
Spline motion models, dual-rate hand/eye sampling with a known extrinsic and clock
offset, and frame-wise cumulative drift on the eye trajectory.

Sampling follows t_hand = t_eye + dt: the eye pose at eye time t_e is
global_offset * model(t_e + dt) * extrinsic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .bspline import SplinePose, fit_spline
from .errors import InsufficientRotation, OutOfDomain, SpanTooShort
from .linear_calibration import RelativePosePair
from .screw_algebra import (
    DualQuat,
    dq_from_rt_arrays,
    dq_multiply_arrays,
    dq_to_rt_arrays,
    quat_conjugate,
    quat_exp,
    quat_from_rotation,
    quat_log,
    quat_multiply,
)
from .trajectory_io import Trajectory

logger = logging.getLogger(__name__)

PRESETS = ("figure8", "random_walk", "spin_rich")
BASE_EPOCH = 100.0
EYE_MARGIN = 0.5
MIN_SEED_SPAN = 10.0
EXCITATION_WINDOW = 0.5
SINGLE_AXIS_RATIO = 1e-3

# Independent random streams per purpose, so one seed gives the same ground truth at every level
TRUTH_STREAM = 0
DRIFT_STREAM = 1
PRESET_STREAM = 2
OUTLIER_STREAM = 3


@dataclass(frozen=True)
class NoiseLevels:
    """Level k maps to 0.5k mm and 0.02k deg per frame"""

    level: int
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 <= self.level <= 10:
            raise ValueError(f"noise level must be in 0..10, got {self.level}")

    @property
    def trans_sigma(self) -> float:
        return self.level * 0.5e-3

    @property
    def rot_sigma(self) -> float:
        """Degrees per frame."""
        return self.level * 0.02


@dataclass
class GroundTruthBundle:
    hand: Trajectory
    eye_clean: Trajectory
    eye_noisy: Trajectory
    extrinsic_gt: DualQuat
    dt_gt: float
    global_offset: DualQuat
    model: Optional[SplinePose] = None
    noise: Optional[NoiseLevels] = None
    eye_phase: float = 0.0

    def metadata(self) -> Dict[str, object]:
        return {
            "dt_gt": self.dt_gt,
            "noise_level": self.noise.level if self.noise else 0,
            "noise_seed": self.noise.rng_seed if self.noise else None,
            "eye_phase": self.eye_phase,
            "drift_model": "right-composed random walk, gaussian translation, gaussian angle about a uniform axis",
        }


# ---------------------------------------------------------------------------
# Motion models
# ---------------------------------------------------------------------------

def _figure8(t: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    w = 2.0 * np.pi / 8.0
    position = np.stack([np.sin(w * t), 0.5 * np.sin(2.0 * w * t), 0.2 * np.sin(0.7 * w * t)], axis=-1)
    rotvec = np.stack([0.6 * np.sin(1.3 * t), 0.5 * np.sin(0.9 * t + 0.4), 0.8 * np.sin(0.5 * t)], axis=-1)
    return rotvec, position


def _spin_rich(t: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    position = np.stack([0.4 * np.sin(0.8 * t), 0.4 * np.cos(0.6 * t), 0.15 * np.sin(1.1 * t)], axis=-1)
    rotvec = np.stack([1.2 * np.sin(2.1 * t), 1.0 * np.sin(1.7 * t + 1.0), 1.5 * np.sin(1.1 * t)], axis=-1)
    return rotvec, position


def _random_walk(t: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Sum of random low-frequency sinusoids per axis."""
    def smooth(amplitude: float, count: int = 4) -> np.ndarray:
        freq = rng.uniform(0.2, 1.5, size=(3, count))
        phase = rng.uniform(0.0, 2.0 * np.pi, size=(3, count))
        amp = rng.uniform(0.3, 1.0, size=(3, count)) * amplitude / count
        return np.sum(amp[None] * np.sin(freq[None] * t[:, None, None] + phase[None]), axis=-1)

    return smooth(1.2), smooth(1.0)


PRESET_MOTIONS: Dict[str, Callable[[np.ndarray, np.random.Generator], Tuple[np.ndarray, np.ndarray]]] = {
    "figure8": _figure8,
    "random_walk": _random_walk,
    "spin_rich": _spin_rich,
}


def rotational_excitation(model: SplinePose, window: float = EXCITATION_WINDOW) -> np.ndarray:
    """Eigenvalues (descending) of the angle-weighted scatter of windowed rotation axes."""
    lo, hi = model.domain
    times = np.arange(lo, hi - window, window / 2.0)
    if len(times) < 2:
        return np.zeros(3)
    start, _ = model.evaluate(times)
    end, _ = model.evaluate(times + window)
    rotvecs = quat_log(quat_multiply(quat_conjugate(start), end))
    scatter = rotvecs.T @ rotvecs / len(rotvecs)
    return np.sort(np.linalg.eigvalsh(scatter))[::-1]


def check_excitation(model: SplinePose) -> np.ndarray:
    eigen = rotational_excitation(model)
    if eigen[0] < 1e-12:
        raise InsufficientRotation("motion model does not rotate")
    if eigen[1] < SINGLE_AXIS_RATIO * eigen[0]:
        logger.warning("Motion model rotates about a single axis; linear calibration will be ill-conditioned")
    return eigen


def preset_model(preset: str, duration: float = 30.0, knot_spacing: float = 0.1, order: int = 4,
                 seed: int = 0) -> SplinePose:
    """Spline with t0 = 0 whose vertices sample an analytic motion at their basis centres."""
    if preset not in PRESET_MOTIONS:
        raise ValueError(f"unknown preset {preset!r}, expected one of {PRESETS}")
    segments = int(np.ceil(duration / knot_spacing - 1e-9))
    num_vertices = segments + order - 1
    centres = (np.arange(num_vertices) - (order - 1) + order / 2.0) * knot_spacing
    rng = np.random.default_rng([seed, PRESET_STREAM])
    rotvec, position = PRESET_MOTIONS[preset](centres, rng)
    return SplinePose(order=order, t0=0.0, spacing=knot_spacing, rot_vertices=quat_exp(rotvec),
                      trans_vertices=position, epoch=BASE_EPOCH)


def build_motion_model(seed_traj: Optional[Trajectory] = None, preset: Optional[str] = None,
                       duration: float = 30.0, knot_spacing: float = 0.1, order: int = 4,
                       seed: int = 0) -> SplinePose:
    """Motion model from a recorded trajectory (fitted) or a named preset."""
    if seed_traj is not None:
        if seed_traj.duration < MIN_SEED_SPAN:
            raise SpanTooShort(f"seed trajectory spans {seed_traj.duration:.2f}s, need {MIN_SEED_SPAN:.0f}s")
        model = fit_spline(seed_traj, order, knot_spacing)
    elif preset is not None:
        model = preset_model(preset, duration, knot_spacing, order, seed)
    else:
        raise ValueError("either a seed trajectory or a preset is required")
    check_excitation(model)
    lo, hi = model.domain
    logger.info("Motion model spans %.2fs with %d vertices", hi - lo, model.num_vertices)
    return model


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

DEFAULT_GLOBAL_OFFSET = DualQuat.from_array(
    dq_from_rt_arrays(quat_exp(np.array([0.3, -0.2, 1.1])), np.array([2.0, -1.0, 0.5]))
)


def _grid(lo: float, hi: float, rate: float) -> np.ndarray:
    count = int(np.floor((hi - lo) * rate + 1e-9)) + 1
    return lo + np.arange(count) / rate


def sample_hand_eye(model: SplinePose, extrinsic: DualQuat, dt: float, hand_rate: float = 100.0,
                    eye_rate: float = 20.0, global_offset: Optional[DualQuat] = None,
                    eye_margin: float = EYE_MARGIN, eye_phase: float = 0.0) -> GroundTruthBundle:
    """Noise-free hand (model frame, hand clock) and eye (W frame, eye clock) trajectories.

    Both trajectories share the model epoch; the eye grid starts ``eye_margin``
    inside the model domain so every shifted eye time is covered. The eye clock
    is offset by ``eye_phase`` seconds from the hand sample lattice; zero puts
    every shifted eye sample on a hand sample.
    """
    if not 0.0 <= eye_phase < 1.0 / eye_rate:
        raise ValueError(f"eye_phase must lie in [0, {1.0 / eye_rate:g}), got {eye_phase}")
    global_offset = DEFAULT_GLOBAL_OFFSET if global_offset is None else global_offset
    lo, hi = model.domain
    if hi - lo <= 2.0 * eye_margin + abs(dt):
        raise OutOfDomain(f"model span {hi - lo:.2f}s cannot cover the offset {dt:.3f}s")

    hand_times = _grid(lo, hi, hand_rate)
    hand_times = hand_times[hand_times <= hi]
    rotations, translations = model.evaluate(hand_times)
    hand = Trajectory(hand_times, rotations, translations, frame_label="hand", epoch=model.epoch)

    # Eye clock times whose hand-clock counterparts stay inside the model domain
    eye_times = _grid(lo + eye_margin + eye_phase, hi - eye_margin, eye_rate) - dt
    rot_model, trans_model = model.evaluate(eye_times + dt)
    poses = dq_multiply_arrays(
        dq_multiply_arrays(global_offset.as_array(), dq_from_rt_arrays(rot_model, trans_model)),
        extrinsic.as_array(),
    )
    q, t = dq_to_rt_arrays(poses)
    eye = Trajectory(eye_times, q, t, frame_label="eye", epoch=model.epoch)
    return GroundTruthBundle(
        hand=hand,
        eye_clean=eye,
        eye_noisy=eye,
        extrinsic_gt=extrinsic,
        dt_gt=float(dt),
        global_offset=global_offset,
        model=model,
        eye_phase=float(eye_phase),
    )


def inject_drift(traj: Trajectory, noise: NoiseLevels) -> Trajectory:
    """pose_k * D_k with D_k = D_{k-1} * delta_k and D_0 = identity (right-composed random walk)."""
    if noise.level == 0:
        return traj
    rng = np.random.default_rng([noise.rng_seed, DRIFT_STREAM])
    n = len(traj)
    steps_t = rng.normal(0.0, noise.trans_sigma, size=(n, 3))
    angles = rng.normal(0.0, np.radians(noise.rot_sigma), size=n)
    axes = rng.normal(size=(n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    deltas = dq_from_rt_arrays(quat_exp(axes * angles[:, None]), steps_t)

    drift = np.zeros((n, 8))
    drift[0, 0] = 1.0
    for k in range(1, n):
        drift[k] = dq_multiply_arrays(drift[k - 1], deltas[k])
    q, t = dq_to_rt_arrays(dq_multiply_arrays(traj.dual_quaternions(), drift))
    return Trajectory(traj.times, q, t, frame_label=traj.frame_label, epoch=traj.epoch)


def random_extrinsic(rng: np.random.Generator, max_translation: float = 0.2) -> DualQuat:
    rotation = quat_from_rotation(Rotation.random(random_state=rng))
    translation = rng.uniform(-max_translation, max_translation, size=3)
    return DualQuat.from_array(dq_from_rt_arrays(rotation, translation))


def generate_bundle(preset: str = "figure8", level: int = 0, seed: int = 0, duration: float = 30.0,
                    hand_rate: float = 100.0, eye_rate: float = 20.0, knot_spacing: float = 0.1,
                    extrinsic: Optional[DualQuat] = None, dt: Optional[float] = None,
                    max_offset: float = 2.0, model: Optional[SplinePose] = None,
                    eye_phase: Optional[float] = None) -> GroundTruthBundle:
    """Complete simulated run: model, random ground truth from ``seed`` and drift at ``level``.

    A ``eye_phase`` of None draws the eye clock phase uniformly within one eye
    period, so the offset is not a whole number of samples.
    """
    rng = np.random.default_rng([seed, TRUTH_STREAM])
    if extrinsic is None:
        extrinsic = random_extrinsic(rng)
    if dt is None:
        dt = float(rng.uniform(-max_offset, max_offset))
    if eye_phase is None:
        eye_phase = float(rng.uniform(0.0, 1.0 / eye_rate))
    if model is None:
        model = build_motion_model(preset=preset, duration=duration + 2.0 * abs(max_offset),
                                   knot_spacing=knot_spacing, seed=seed)
    bundle = sample_hand_eye(model, extrinsic, dt, hand_rate, eye_rate, eye_phase=eye_phase)
    noise = NoiseLevels(level, seed)
    return replace(bundle, eye_noisy=inject_drift(bundle.eye_clean, noise), noise=noise)


def simulation_from_config(config) -> GroundTruthBundle:
    """Bundle for a SimulationConfig."""
    return generate_bundle(
        preset=config.preset,
        level=config.level,
        seed=config.seed,
        duration=config.duration,
        hand_rate=config.hand_rate,
        eye_rate=config.eye_rate,
        knot_spacing=config.knot_spacing,
        dt=config.dt,
        max_offset=config.max_offset,
        eye_phase=config.eye_phase,
    )


def inject_outlier_pairs(pairs: Sequence[RelativePosePair], fraction: float,
                         rng_seed: int = 0) -> Tuple[List[RelativePosePair], np.ndarray]:
    """Replace a fraction of eye relative motions with unrelated random motions.

    Returns the corrupted list and the indices that were replaced.
    """
    rng = np.random.default_rng([rng_seed, OUTLIER_STREAM])
    count = int(round(fraction * len(pairs)))
    chosen = np.sort(rng.choice(len(pairs), size=count, replace=False))
    corrupted = list(pairs)
    for index in chosen:
        axis = rng.normal(size=3)
        angle = rng.uniform(np.radians(10.0), np.radians(60.0))
        rotation = quat_exp(axis / np.linalg.norm(axis) * angle)
        translation = rng.uniform(-0.3, 0.3, size=3)
        outlier = DualQuat.from_array(dq_from_rt_arrays(rotation, translation))
        corrupted[index] = replace(pairs[index], eye_rel=outlier)
    return corrupted, chosen


def relative_motion_scalars(traj: Trajectory, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """(n, 2) scalar parts (omega, omega') of canonical relative motions."""
    poses = traj.dual_quaternions()
    rel = dq_multiply_arrays(np.concatenate([quat_conjugate(poses[i, :4]), quat_conjugate(poses[i, 4:])], axis=1),
                             poses[j])
    sign = np.where(rel[:, 0] < 0, -1.0, 1.0)
    return np.stack([rel[:, 0] * sign, rel[:, 4] * sign], axis=1)

