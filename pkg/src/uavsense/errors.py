"""Exception hierarchy shared across the package."""


class UavSenseError(Exception):
    """Base class for all package errors."""


class DegenerateGeometry(UavSenseError):
    """Zero range between a base station and a target."""


class ShapeMismatch(UavSenseError):
    """Array dimensions disagree with the base-station configuration."""


class TooManyBeams(UavSenseError):
    """More flagged beams than RF chains available for alignment."""


class PlanInvalid(UavSenseError):
    """Smoothing split is inconsistent with the tensor dimensions."""


class RankDeficient(UavSenseError):
    """Signal subspace has numerical rank below the requested model order."""


class EigSolverFailure(UavSenseError):
    """Eigen decomposition of the shift-invariance matrix failed."""


class DuplicateGenerators(UavSenseError):
    """Two recovered delay generators coincide; decomposition is not unique."""


class DegenerateElevation(UavSenseError):
    """Elevation too close to broadside; azimuth is undefined."""


class NullInput(UavSenseError):
    """An all-zero input makes the requested argmax undefined."""


class SingularScale(UavSenseError):
    """A scaling-ambiguity factor is numerically zero."""


class RankDeficientGeometry(UavSenseError):
    """Too few or ill-conditioned viewing directions for velocity recovery."""


class EmptyGraph(UavSenseError):
    """All association vertices were removed as false detections."""


class Rank1MismatchWarning(UserWarning):
    """Polarization/Doppler block deviates noticeably from rank one."""


class GridExhaustedWarning(UserWarning):
    """A grid search peaked at the boundary of the search interval."""
