class BilliardError(Exception):
    """Base class for errors raised by this package."""


class CollisionError(BilliardError):
    def __init__(self, message, step=None, point=None):
        super().__init__(message if step is None else f"{message} at step {step}")
        self.step = step
        self.point = point


class NoCollisionWithinHorizon(CollisionError):
    pass


class GrazingCollision(CollisionError):
    pass


class TableNotValidated(BilliardError):
    pass


class OverlappingScatterers(BilliardError):
    pass


class InfiniteHorizonDetected(BilliardError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class GrazingRateExceeded(BilliardError):
    pass


class UnknownObservable(BilliardError, KeyError):
    pass


class ShapeMismatch(BilliardError, ValueError):
    pass


class BoundViolation(BilliardError):
    pass


class InsufficientPairs(BilliardError):
    pass


class FitFailed(BilliardError):
    pass


class DegenerateVariance(BilliardError):
    pass


class NonSummableWarning(UserWarning):
    pass


class ConfigError(BilliardError):
    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
