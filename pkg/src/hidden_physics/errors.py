"""Exception hierarchy shared by the library and the command line."""


class HiddenPhysicsError(Exception):
    """Base class for all errors raised by this package."""


class ArgumentError(HiddenPhysicsError, ValueError):
    """Bad shapes, ranges or names passed to a public function."""


class IntegrationError(HiddenPhysicsError, RuntimeError):
    """The ODE integrator could not make progress (step size underflow)."""

    def __init__(self, message, t_reached):
        super().__init__(message)
        self.t_reached = t_reached


class DivergenceError(HiddenPhysicsError, RuntimeError):
    """The integrated state became non-finite."""

    def __init__(self, message, t_reached):
        super().__init__(message)
        self.t_reached = t_reached


class TapeReuseError(HiddenPhysicsError, RuntimeError):
    """A tape was passed to a second backward pass."""


class ConfigError(HiddenPhysicsError, ValueError):
    """A training configuration failed validation."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class TrainingDivergedError(HiddenPhysicsError, RuntimeError):
    """Loss or gradient became non-finite during training.

    ``checkpoint`` holds the last finite ``(state_net, dyn_net)`` pair seen
    at a logging step, or ``None`` if divergence happened before the first one.
    ``scaling`` is the ScalingSpec the networks were trained under.
    """

    def __init__(self, message, step, checkpoint=None, scaling=None):
        super().__init__(message)
        self.step = step
        self.checkpoint = checkpoint
        self.scaling = scaling


class UndefinedMetricError(HiddenPhysicsError, ValueError):
    """The reference signal has zero norm so a relative error is undefined."""
