"""Meta-graph convolutional recurrent networks for multivariate traffic forecasting."""
__version__ = "0.1.0"

from .errors import ConfigError, EmptyDatasetError, TrainingAborted, UnsupportedOperation  # noqa: E402
from .model import VARIANTS, MegaCRN, ModelConfig, count_parameters, parameter_breakdown  # noqa: E402
from .training import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train  # noqa: E402

__all__ = [
    "ConfigError",
    "EmptyDatasetError",
    "MegaCRN",
    "ModelConfig",
    "TrainConfig",
    "TrainingAborted",
    "UnsupportedOperation",
    "VARIANTS",
    "count_parameters",
    "evaluate",
    "load_checkpoint",
    "parameter_breakdown",
    "save_checkpoint",
    "train",
]
