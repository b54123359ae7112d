"""Exception and warning types shared across the package."""


class RangelocError(Exception):
    """Base class for all rangeloc errors."""


class EmptyMeasurements(RangelocError):
    """A measurement list was empty where at least one sample is required."""


class LengthMismatch(RangelocError):
    """Paired trajectories have different lengths."""


class Infeasible(RangelocError):
    """The SDP equality constraints cannot be satisfied."""


class NumericalBreakdown(RangelocError):
    """A factorization or scaling step failed beyond recovery."""


class DegenerateSpectrum(RangelocError):
    """The leading eigenvector of the relaxed solution has a vanishing
    corner entry, so the lifted vector cannot be normalized."""


class RankDeficient(RangelocError):
    """The rotation projection is ill-defined for this input spectrum."""


class DegenerateRange(RangelocError):
    """A predicted range is (numerically) zero, so its residual direction
    is undefined."""


class InvalidSigma(RangelocError):
    """Noise standard deviation must be positive."""


class ZeroSignal(RangelocError):
    """Cannot calibrate noise against an all-zero distance signal."""


class ZeroVector(RangelocError):
    """Direction error is undefined for a zero-length vector."""


class ParseError(RangelocError):
    """Malformed flight-log input."""


class NonMonotonicTime(ParseError):
    """Flight-log timestamps must be strictly increasing."""


class EmptyFile(ParseError):
    """Flight log contains no data rows."""


class StageError(RangelocError):
    """A pipeline stage failed; carries the stage label and the cause."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class UnderDeterminedWarning(UserWarning):
    """Fewer than 7 distance measurements: the estimate satisfies the data
    but may be far from the true transform."""


class AmbiguousProjectionWarning(UserWarning):
    """The nearest-rotation projection required a sign flip with a (near-)
    tied trailing spectrum; the returned minimizer is not unique."""
