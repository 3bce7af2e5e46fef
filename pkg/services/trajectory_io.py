"""
Trajectory I/O
Trajectory data model, TUM / EuRoC ingestion, geodesic resampling and time shifting
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import IO, List, Optional, Tuple, Union

import numpy as np
from scipy.spatial.transform import Slerp

from .errors import EmptyTrajectory, NonMonotonicTime, OutOfDomain, ParseError, SpanTooShort
from .screw_algebra import (
    DualQuat,
    canonicalize_quats,
    dq_from_rt_arrays,
    dq_to_rt_arrays,
    quat_from_rotation,
    quat_to_rotation,
)

logger = logging.getLogger(__name__)

GAP_FACTOR = 5.0
FORMATS = ("tum", "euroc")


@dataclass(frozen=True)
class PoseSample:
    t: float
    pose: DualQuat


class Trajectory:
    """Time-ordered pose samples in one frame convention.

    Timestamps are double-precision seconds relative to ``epoch``; the absolute
    time of sample i is ``epoch + times[i]``. Rotations are stored scalar-first.
    """

    def __init__(
        self,
        times,
        rotations,
        translations,
        frame_label: str = "",
        epoch: float = 0.0,
    ):
        times = np.array(times, dtype=float).reshape(-1)
        rotations = np.array(rotations, dtype=float).reshape(-1, 4)
        translations = np.array(translations, dtype=float).reshape(-1, 3)
        if len(times) == 0:
            raise EmptyTrajectory("trajectory has no samples")
        if not (len(times) == len(rotations) == len(translations)):
            raise ValueError("times, rotations and translations differ in length")
        steps = np.diff(times)
        if np.any(steps <= 0):
            index = int(np.argmax(steps <= 0)) + 1
            raise NonMonotonicTime(index + 1, float(times[index - 1]), float(times[index]))

        rotations = canonicalize_quats(rotations / np.linalg.norm(rotations, axis=1, keepdims=True))
        for array in (times, rotations, translations):
            array.setflags(write=False)
        self.times = times
        self.rotations = rotations
        self.translations = translations
        self.frame_label = frame_label
        self.epoch = float(epoch)

    @classmethod
    def from_poses(cls, times, poses: List[DualQuat], frame_label: str = "", epoch: float = 0.0) -> "Trajectory":
        arrays = np.array([pose.as_array() for pose in poses])
        q, t = dq_to_rt_arrays(arrays)
        return cls(times, q, t, frame_label=frame_label, epoch=epoch)

    def __len__(self) -> int:
        return len(self.times)

    def __repr__(self) -> str:
        return (f"Trajectory(frame={self.frame_label!r}, samples={len(self)}, "
                f"span={self.duration:.3f}s)")

    @property
    def absolute_times(self) -> np.ndarray:
        return self.epoch + self.times

    @property
    def start(self) -> float:
        return self.epoch + float(self.times[0])

    @property
    def end(self) -> float:
        return self.epoch + float(self.times[-1])

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def median_period(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(np.median(np.diff(self.times)))

    @property
    def native_rate(self) -> float:
        period = self.median_period
        return 1.0 / period if period > 0 else 0.0

    def dual_quaternions(self) -> np.ndarray:
        """(n, 8) array of unit dual quaternions."""
        return dq_from_rt_arrays(self.rotations, self.translations)

    def pose(self, index: int) -> DualQuat:
        return DualQuat.from_array(self.dual_quaternions()[index])

    @property
    def samples(self) -> List[PoseSample]:
        dqs = self.dual_quaternions()
        return [PoseSample(float(t), DualQuat.from_array(d)) for t, d in zip(self.absolute_times, dqs)]

    def gaps(self, factor: float = GAP_FACTOR) -> List[Tuple[int, float]]:
        """Intervals longer than ``factor`` times the median period, as (start index, length)."""
        if len(self) < 3:
            return []
        steps = np.diff(self.times)
        limit = factor * np.median(steps)
        return [(int(i), float(steps[i])) for i in np.flatnonzero(steps > limit)]

    def subset(self, mask) -> "Trajectory":
        mask = np.asarray(mask)
        return Trajectory(self.times[mask], self.rotations[mask], self.translations[mask],
                          frame_label=self.frame_label, epoch=self.epoch)

    def with_poses(self, rotations, translations) -> "Trajectory":
        return Trajectory(self.times, rotations, translations, frame_label=self.frame_label, epoch=self.epoch)

    def rebased(self, epoch: float) -> "Trajectory":
        """Same absolute timestamps expressed relative to another epoch."""
        return Trajectory(self.times + (self.epoch - epoch), self.rotations, self.translations,
                          frame_label=self.frame_label, epoch=epoch)


# ---------------------------------------------------------------------------
# Parsing and serialization
# ---------------------------------------------------------------------------

def _decode(data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        line_no = data.count(b"\n", 0, e.start) + 1
        raise ParseError(f"invalid UTF-8 byte 0x{data[e.start]:02x}", line_no) from e


def _read_text(source: Union[IO[bytes], IO[str], bytes, str]) -> str:
    if isinstance(source, bytes):
        return _decode(source)
    if isinstance(source, str):
        return source
    data = source.read()
    return _decode(data) if isinstance(data, bytes) else data


def parse_trajectory(source, format: str = "tum", frame_label: str = "") -> Trajectory:
    """Parse a TUM text or EuRoC ground-truth CSV stream.

    TUM rows are ``t tx ty tz qx qy qz qw``; EuRoC rows start with
    ``timestamp_ns,px,py,pz,qw,qx,qy,qz``. Quaternions are normalized on ingest.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown trajectory format {format!r}, expected one of {FORMATS}")
    text = _read_text(source)
    if format == "tum":
        return _parse_tum(text, frame_label)
    return _parse_euroc(text, frame_label)


def _check_rotation(quat: List[float], line_no: int) -> None:
    if not np.isfinite(quat).all() or np.linalg.norm(quat) < 1e-12:
        raise ParseError("quaternion is zero or not finite", line_no)


def _parse_tum(text: str, frame_label: str) -> Trajectory:
    times: List[float] = []
    rows: List[List[float]] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != 8:
            raise ParseError(f"expected 8 fields, found {len(fields)}", line_no)
        try:
            values = [float(field) for field in fields]
        except ValueError as e:
            raise ParseError(str(e), line_no) from e
        if not np.isfinite(values).all():
            raise ParseError("non-finite value", line_no)
        _check_rotation(values[4:8], line_no)
        if times and values[0] <= times[-1]:
            raise NonMonotonicTime(line_no, times[-1], values[0])
        times.append(values[0])
        rows.append(values)

    if not rows:
        raise EmptyTrajectory("no pose rows found")
    data = np.array(rows)
    epoch = data[0, 0]
    # On disk x, y, z, w; internally w first
    rotations = data[:, [7, 4, 5, 6]]
    return Trajectory(data[:, 0] - epoch, rotations, data[:, 1:4], frame_label=frame_label, epoch=epoch)


def _parse_euroc(text: str, frame_label: str) -> Trajectory:
    stamps_ns: List[int] = []
    rows: List[List[float]] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = [field.strip() for field in stripped.split(",")]
        if line_no == 1 and not fields[0].lstrip("-").isdigit():
            continue  # header
        if len(fields) < 8:
            raise ParseError(f"expected at least 8 columns, found {len(fields)}", line_no)
        try:
            stamp = int(fields[0])
            values = [float(field) for field in fields[1:8]]
        except ValueError as e:
            raise ParseError(str(e), line_no) from e
        _check_rotation(values[3:7], line_no)
        if stamps_ns and stamp <= stamps_ns[-1]:
            raise NonMonotonicTime(line_no, stamps_ns[-1] * 1e-9, stamp * 1e-9)
        stamps_ns.append(stamp)
        rows.append(values)

    if not rows:
        raise EmptyTrajectory("no pose rows found")
    first = stamps_ns[0]
    # Integer subtraction before the float conversion keeps nanosecond resolution
    times = np.array([(stamp - first) for stamp in stamps_ns], dtype=float) / 1e9
    epoch = first // 1_000_000_000 + (first % 1_000_000_000) / 1e9
    data = np.array(rows)
    return Trajectory(times, data[:, 3:7], data[:, 0:3], frame_label=frame_label, epoch=float(epoch))


def load_trajectory(path: Union[str, Path], format: str = "tum", frame_label: str = "") -> Trajectory:
    with open(path, "rb") as handle:
        return parse_trajectory(handle, format=format, frame_label=frame_label or Path(path).stem)


def serialize_trajectory(traj: Trajectory, comment: Optional[str] = None) -> str:
    """TUM text with 17 significant digits."""
    buffer = io.StringIO()
    buffer.write(f"# {comment or traj.frame_label or 'trajectory'}\n")
    buffer.write("# t tx ty tz qx qy qz qw\n")
    for t, p, q in zip(traj.absolute_times, traj.translations, traj.rotations):
        values = [t, p[0], p[1], p[2], q[1], q[2], q[3], q[0]]
        buffer.write(" ".join(f"{value:.17g}" for value in values) + "\n")
    return buffer.getvalue()


def write_tum(traj: Trajectory, path: Union[str, Path], comment: Optional[str] = None) -> None:
    Path(path).write_text(serialize_trajectory(traj, comment), encoding="utf-8")


# ---------------------------------------------------------------------------
# Interpolation, resampling and shifting
# ---------------------------------------------------------------------------

def interpolate(traj: Trajectory, times) -> Tuple[np.ndarray, np.ndarray]:
    """Poses at the given epoch-relative times: shortest-arc slerp for rotation, linear translation.

    Times must lie inside the trajectory span; nothing is extrapolated.
    """
    times = np.asarray(times, dtype=float)
    if len(traj) < 2:
        raise SpanTooShort("interpolation needs at least two samples")
    lo, hi = traj.times[0], traj.times[-1]
    if times.size and (times.min() < lo or times.max() > hi):
        raise OutOfDomain(f"requested times [{times.min():.6f}, {times.max():.6f}] "
                          f"outside trajectory span [{lo:.6f}, {hi:.6f}]")
    slerp = Slerp(traj.times, quat_to_rotation(traj.rotations))
    rotations = quat_from_rotation(slerp(times))
    translations = np.stack([np.interp(times, traj.times, traj.translations[:, k]) for k in range(3)], axis=-1)

    # Exact hits keep their stored pose bit-for-bit
    index = np.searchsorted(traj.times, times)
    index = np.clip(index, 0, len(traj) - 1)
    exact = traj.times[index] == times
    rotations[exact] = traj.rotations[index[exact]]
    translations[exact] = traj.translations[index[exact]]
    return rotations, translations


def resample(traj: Trajectory, rate: float) -> Trajectory:
    """Uniform grid from the first to the last timestamp at 1/rate spacing."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    if traj.duration <= 2.0 / rate:
        raise SpanTooShort(f"span {traj.duration:.3f}s is too short to resample at {rate} Hz")
    for index, length in traj.gaps():
        logger.warning("Gap of %.3fs after sample %d in %s; interpolating across it",
                       length, index, traj.frame_label or "trajectory")
    count = int(np.floor(traj.duration * rate + 1e-9)) + 1
    grid = traj.times[0] + np.arange(count) / rate
    grid = grid[grid <= traj.times[-1]]
    rotations, translations = interpolate(traj, grid)
    return Trajectory(grid, rotations, translations, frame_label=traj.frame_label, epoch=traj.epoch)


def shift_time(traj: Trajectory, dt: float) -> Trajectory:
    """Add dt seconds to every timestamp; intervals are preserved exactly."""
    return Trajectory(traj.times, traj.rotations, traj.translations,
                      frame_label=traj.frame_label, epoch=traj.epoch + dt)


def align_to_grid(hand: Trajectory, eye: Trajectory, dt: float) -> Tuple[Trajectory, Trajectory]:
    """Put hand and eye on a shared grid given the clock offset (t_hand = t_eye + dt).

    The eye timestamps define the grid; the hand is interpolated at the
    corresponding hand-clock instants and eye samples outside the hand span are
    dropped. Both returned trajectories live on the hand clock with the hand epoch.
    """
    eye_on_hand = shift_time(eye, dt).rebased(hand.epoch)
    inside = (eye_on_hand.times >= hand.times[0]) & (eye_on_hand.times <= hand.times[-1])
    if inside.sum() < 2:
        raise SpanTooShort("hand and eye spans do not overlap after the time shift")
    eye_grid = eye_on_hand.subset(inside)
    rotations, translations = interpolate(hand, eye_grid.times)
    hand_grid = Trajectory(eye_grid.times, rotations, translations, frame_label=hand.frame_label, epoch=hand.epoch)
    return hand_grid, eye_grid
