"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array shapes do not line up with the declared layer/batch structure."""


class ParameterError(ValueError):
    """A numeric argument is outside its valid range."""


class NumericError(ValueError):
    """Non-finite values encountered where finite math is required."""


class OwnershipError(ValueError):
    """A transition was routed to a buffer belonging to a different agent."""


class EmptySourceError(ValueError):
    """Sampling was requested from an empty buffer or batch."""


class UnseenStateError(KeyError):
    """Behavior statistics were queried for a state never stored."""


class SupportError(ValueError):
    """A distribution ratio or divergence hit a zero-probability denominator."""


class ActionError(ValueError):
    """An action index is invalid for the acting agent."""


class LifecycleError(RuntimeError):
    """An environment was stepped after termination or before reset."""


class CapabilityError(ValueError):
    """The requested exact computation is outside the supported problem size."""


class ConfigError(ValueError):
    """A run configuration violates its documented ranges."""


class CheckpointError(RuntimeError):
    """A checkpoint file is unreadable, truncated, or version-incompatible."""
