"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value or combination of values is invalid."""


class EmptyDatasetError(ValueError):
    """Not enough timesteps to build a single (input, target) window."""


class UnsupportedOperation(RuntimeError):
    """The requested operation does not apply to this model variant."""


class TrainingAborted(RuntimeError):
    """Raised when a loss component turns non-finite during training."""

    def __init__(self, component, epoch, step):
        self.component = component
        self.epoch = epoch
        self.step = step
        super().__init__(
            f"non-finite loss component {component!r} at epoch {epoch}, step {step}"
        )
