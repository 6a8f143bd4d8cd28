"""Exception types shared across the stack."""


class ConeRaceError(Exception):
    """Base class for all package errors."""


class DomainError(ConeRaceError, ValueError):
    """Input outside the domain where a model is defined."""


class TrackGenerationError(ConeRaceError):
    pass


class OffTrackError(ConeRaceError):
    pass


class ProjectionError(ConeRaceError):
    """Homography maps a point to the line at infinity."""


class DegenerateConfigurationError(ConeRaceError):
    pass


class MeasurementOrderError(ConeRaceError):
    pass


class TrainingError(ConeRaceError):
    pass


class DatasetError(ConeRaceError):
    pass


class InsufficientTrackError(ConeRaceError):
    pass


class PlanningError(ConeRaceError):
    pass


class InfeasibleCorridorError(ConeRaceError):
    pass


class LinearizationError(ConeRaceError):
    pass


class MetricsError(ConeRaceError):
    pass
