"""Exception hierarchy shared by every module of the package."""


class QSmoothError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(QSmoothError, ValueError):
    pass


class InvalidInputError(QSmoothError, ValueError):
    pass


class InvalidModelError(QSmoothError, ValueError):
    """Noise model is not realizable (joint noise covariance not PSD)."""


class UncertaintyViolationError(InvalidInputError):
    """Covariance violates the Schrodinger-Heisenberg uncertainty relation."""


class RejectedModelError(QSmoothError, ValueError):
    """Unravelling failed validation; ``report`` lists every violation."""

    def __init__(self, report):
        self.report = report
        super().__init__("; ".join(report.violations) or "rejected model")


class GridMismatchError(QSmoothError, ValueError):
    pass


class DivergenceError(QSmoothError, RuntimeError):
    pass


class ConsistencyError(QSmoothError, RuntimeError):
    """Two independent computational routes disagreed."""


class ConfigError(QSmoothError, ValueError):
    """Scenario configuration is invalid; ``path`` names the failing field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
