"""
Error hierarchy shared by the calibration services
Every failure a service can raise is a HandEyeError; stages map them to exit codes
"""

from typing import Any, Optional


class HandEyeError(Exception):
    """Base class for all calibration errors"""

    stage: Optional[str] = None

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.context = context


# Ingestion

class ParseError(HandEyeError):
    stage = "ingest"

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}", line_no=line_no)
        self.line_no = line_no


class NonMonotonicTime(HandEyeError):
    stage = "ingest"

    def __init__(self, line_no: int, previous: float, current: float):
        super().__init__(
            f"line {line_no}: timestamp {current!r} does not increase over {previous!r}",
            line_no=line_no,
        )
        self.line_no = line_no


class EmptyTrajectory(HandEyeError):
    stage = "ingest"


class MissingInput(HandEyeError):
    stage = "ingest"


class NonUnitRotation(HandEyeError):
    pass


# Trajectory handling

class SpanTooShort(HandEyeError):
    pass


class OutOfDomain(HandEyeError):
    pass


# Time alignment

class RateMismatch(HandEyeError):
    stage = "align"


class SignalTooShort(HandEyeError):
    stage = "align"


class PeakAtBoundary(HandEyeError):
    stage = "align"


class InsufficientOverlap(HandEyeError):
    stage = "align"


class NoMotion(HandEyeError):
    stage = "align"


class UnreliableEstimate(HandEyeError):
    stage = "align"


# Linear calibration

class NoPairs(HandEyeError):
    stage = "calibrate"


class DegeneratePair(HandEyeError):
    stage = "calibrate"


class IllConditioned(HandEyeError):
    stage = "calibrate"


class QuadraticDegenerate(HandEyeError):
    stage = "calibrate"


class NoConsensus(HandEyeError):
    stage = "calibrate"


# Batch refinement

class DivergedOrStalled(HandEyeError):
    stage = "refine"


# Evaluation

class DegenerateGeometry(HandEyeError):
    stage = "evaluate"


class NoMatches(HandEyeError):
    stage = "evaluate"


# Simulation

class InsufficientRotation(HandEyeError):
    pass
