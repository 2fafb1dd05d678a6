"""Exception and warning types shared across pacecurve."""


class PacecurveError(Exception):
    """Base class for all pacecurve errors."""


# -- ingest -----------------------------------------------------------------

class IngestError(PacecurveError):
    """Raised for problems reading or validating race records."""


class EmptyFile(IngestError):
    pass


class MalformedHeader(IngestError):
    pass


class BadRow(IngestError):
    """A data row that could not be turned into a RaceRecord.

    ``line`` is the 1-based physical line number in the source file.
    """

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class EmptyInput(IngestError):
    pass


class GridMismatch(IngestError):
    pass


class DuplicateRace(UserWarning):
    """Two races share athlete, date and phase. Both are kept."""


# -- functional basis / fPCA -------------------------------------------------

class BasisError(PacecurveError):
    pass


class TooManyBasisFunctions(BasisError):
    pass


class SingularDesign(BasisError):
    pass


class OutOfDomain(BasisError):
    pass


class BasisMismatch(BasisError):
    pass


class FpcaError(PacecurveError):
    pass


class InsufficientData(FpcaError):
    pass


class NonPsdCovariance(FpcaError):
    pass


class ScoreMismatch(FpcaError):
    """Quadrature and coefficient-space scores disagree."""


# -- HMM ---------------------------------------------------------------------

class HmmError(PacecurveError):
    pass


class DegenerateState(HmmError):
    """A state lost (almost) all responsibility mass during EM."""


class FitFailed(HmmError):
    """Every restart of an EM fit failed."""


class UnknownCovariateLevel(HmmError):
    """A record carries a covariate level the design has no column for."""

    def __init__(self, level: str, design: str):
        super().__init__(f"covariate level {level!r} is not representable in design {design!r}")
        self.level = level
        self.design = design


class SingularMStepWarning(UserWarning):
    """A covariate column is absent from the data and was dropped for the fit."""


# -- synth -------------------------------------------------------------------

class SpecError(PacecurveError):
    """Invalid generator spec. ``path`` names the offending field."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason
