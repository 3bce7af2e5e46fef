"""
Time Alignment
Estimates the hand-eye clock offset by correlating angular-speed signals and
refining the correlation peak with a quadratic fit.

Sign convention (project-wide): t_hand = t_eye + dt.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import fft

from .errors import (
    InsufficientOverlap,
    NoMotion,
    PeakAtBoundary,
    RateMismatch,
    SignalTooShort,
)
from .screw_algebra import quat_angles, quat_conjugate, quat_multiply
from .trajectory_io import Trajectory, resample

logger = logging.getLogger(__name__)

MIN_SIGNAL_LENGTH = 8
MIN_OVERLAP_FRACTION = 0.1
NO_MOTION_VARIANCE = 1e-8
CURVATURE_EPSILON = 1e-12
ENERGY_FLOOR = 1e-12


@dataclass(frozen=True)
class AlignmentSettings:
    correlation_rate: Optional[float] = None
    min_overlap: float = 5.0
    reliability_threshold: float = 0.6


@dataclass(frozen=True)
class AngularSpeedSignal:
    rate: float
    values: np.ndarray
    t0: float

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class CorrelationResult:
    values: np.ndarray
    lags: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class TimeOffsetEstimate:
    dt: float
    peak_correlation: float
    curvature_ok: bool
    reliable: bool = True
    integer_lag: int = 0
    fractional_lag: float = 0.0
    rate: float = 0.0
    diagnostics: Dict[str, object] = field(default_factory=dict)


def angular_speed(traj: Trajectory, rate: float) -> AngularSpeedSignal:
    """Forward-difference angular speed (rad/s) of the trajectory resampled at ``rate``."""
    grid = resample(traj, rate)
    relative = quat_multiply(quat_conjugate(grid.rotations[:-1]), grid.rotations[1:])
    values = quat_angles(relative) * rate
    return AngularSpeedSignal(rate=float(rate), values=values, t0=grid.start)


def _overlap_counts(len_a: int, len_b: int, lags: np.ndarray) -> np.ndarray:
    return np.minimum(len_a, len_b - lags) - np.maximum(0, -lags)


def cross_correlate(a: AngularSpeedSignal, b: AngularSpeedSignal) -> CorrelationResult:
    """Zero-mean normalized cross-correlation c[k] = sum_m a[m] * b[m + k].

    Computed in the frequency domain (transform, conjugate-multiply, inverse)
    with zero padding. Each lag is normalized by the energies of its own overlap
    window, so |c[k]| <= 1 and the shrinking overlap does not tilt the peak.
    A peak at lag k means b is a delayed by k samples.
    """
    if not np.isclose(a.rate, b.rate, rtol=1e-9, atol=0.0):
        raise RateMismatch(f"signal rates differ: {a.rate} Hz vs {b.rate} Hz")
    if len(a) < MIN_SIGNAL_LENGTH or len(b) < MIN_SIGNAL_LENGTH:
        raise SignalTooShort(f"signals need at least {MIN_SIGNAL_LENGTH} samples, "
                             f"got {len(a)} and {len(b)}")

    x = a.values - a.values.mean()
    y = b.values - b.values.mean()
    scale = np.sqrt(np.dot(x, x) * np.dot(y, y))
    if scale <= 0.0:
        raise NoMotion("angular-speed signal has zero variance")

    len_a, len_b = len(x), len(y)
    size = fft.next_fast_len(len_a + len_b - 1)
    spectrum = fft.rfft(y, size) * np.conj(fft.rfft(x, size))
    circular = fft.irfft(spectrum, size)

    lags = np.arange(-(len_a - 1), len_b)
    # Negative lags wrap to the end of the circular result
    raw = circular[lags % size]
    lo = np.maximum(0, -lags)
    hi = np.minimum(len_a, len_b - lags)
    energy_x = np.concatenate([[0.0], np.cumsum(x * x)])
    energy_y = np.concatenate([[0.0], np.cumsum(y * y)])
    energy = (energy_x[hi] - energy_x[lo]) * (energy_y[hi + lags] - energy_y[lo + lags])
    norm = np.sqrt(np.maximum(energy, 0.0))
    values = np.divide(raw, norm, out=np.zeros_like(raw), where=norm > ENERGY_FLOOR * scale)
    min_overlap = max(MIN_SIGNAL_LENGTH, int(np.ceil(MIN_OVERLAP_FRACTION * min(len_a, len_b))))
    valid = _overlap_counts(len_a, len_b, lags) >= min_overlap
    return CorrelationResult(values=values, lags=lags, valid=valid)


def refine_peak(corr: np.ndarray, peak_index: int) -> Tuple[float, bool]:
    """Fractional peak position from a parabola through the peak and its two neighbours.

    Returns (peak_index + delta, curvature_ok) with delta in [-0.5, 0.5];
    a non-concave neighbourhood gives delta = 0 and curvature_ok False.
    """
    corr = np.asarray(corr, dtype=float)
    if peak_index < 1 or peak_index > len(corr) - 2:
        raise PeakAtBoundary(f"peak index {peak_index} has no neighbour on both sides")
    c_minus, c_zero, c_plus = corr[peak_index - 1], corr[peak_index], corr[peak_index + 1]
    denominator = c_minus - 2.0 * c_zero + c_plus
    if denominator >= -CURVATURE_EPSILON:
        return float(peak_index), False
    delta = 0.5 * (c_minus - c_plus) / denominator
    delta = float(np.clip(delta, -0.5, 0.5))
    return peak_index + delta, True


def estimate_time_offset(hand: Trajectory, eye: Trajectory, settings: Optional[AlignmentSettings] = None,
                         refine: bool = True) -> TimeOffsetEstimate:
    """Clock offset dt with t_hand = t_eye + dt.

    ``settings`` default to AlignmentSettings(); a ``correlation_rate`` of None uses the
    lower native rate. ``refine=False`` keeps the integer-lag estimate, the baseline the quadratic fit improves on.
    """
    config = settings or AlignmentSettings()
    overlap = min(hand.duration, eye.duration)
    if overlap < config.min_overlap:
        raise InsufficientOverlap(f"trajectories overlap at most {overlap:.2f}s, "
                                  f"need {config.min_overlap:.2f}s")

    rate = config.correlation_rate or min(hand.native_rate, eye.native_rate)
    hand_signal = angular_speed(hand, rate)
    eye_signal = angular_speed(eye, rate)

    variances = (float(np.var(hand_signal.values)), float(np.var(eye_signal.values)))
    if min(variances) < NO_MOTION_VARIANCE:
        raise NoMotion(f"angular-speed variance too small (hand {variances[0]:.3g}, "
                       f"eye {variances[1]:.3g} rad^2/s^2)")

    correlation = cross_correlate(hand_signal, eye_signal)
    masked = np.where(correlation.valid, correlation.values, -np.inf)
    peak_index = int(np.argmax(masked))
    peak_value = float(correlation.values[peak_index])

    curvature_ok = False
    fractional_index = float(peak_index)
    if refine:
        # Neighbours outside the minimum-overlap window are still usable for the fit
        fractional_index, curvature_ok = refine_peak(correlation.values, peak_index)
    lag = float(correlation.lags[0]) + fractional_index

    dt = (hand_signal.t0 - eye_signal.t0) - lag / rate
    shifted_overlap = min(hand.end, eye.end + dt) - max(hand.start, eye.start + dt)
    if shifted_overlap < config.min_overlap:
        raise InsufficientOverlap(f"overlap after applying dt={dt:.4f}s is {shifted_overlap:.2f}s")

    reliable = peak_value >= config.reliability_threshold
    if not reliable:
        logger.warning("Peak correlation %.3f below reliability threshold %.2f",
                       peak_value, config.reliability_threshold)

    logger.info("Time offset dt=%.6fs (peak correlation %.3f, rate %.1f Hz, refined=%s)",
                dt, peak_value, rate, refine)
    return TimeOffsetEstimate(
        dt=float(dt),
        peak_correlation=peak_value,
        curvature_ok=curvature_ok,
        reliable=reliable,
        integer_lag=int(correlation.lags[peak_index]),
        fractional_lag=lag,
        rate=float(rate),
        diagnostics={
            "preprocessing": "mean removal only",
            "hand_samples": len(hand_signal),
            "eye_samples": len(eye_signal),
            "overlap_s": float(shifted_overlap),
        },
    )
