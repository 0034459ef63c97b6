"""K-fan multimodal deep networks built from restricted Boltzmann machines."""

from .errors import (ConfigError, DimensionError, DomainError, FormatError, KFanError,
                     NumericError, OracleBudgetError)
from .network import (BranchSpec, JointTrainConfig, KFanNetwork, MeanFieldState, build_kfan,
                      mean_field_posterior, pretrain_kfan)
from .rbm import Rbm, TrainConfig
from .finetune import FineTuneConfig, finetune, forward_multiview, forward_restore
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, parse_config

__version__ = "0.1.0"

__all__ = [
    "BranchSpec", "ConfigError", "DimensionError", "DomainError", "FineTuneConfig",
    "FormatError", "JointTrainConfig", "KFanError", "KFanNetwork", "MeanFieldState",
    "NumericError", "OracleBudgetError", "Rbm", "RunConfig", "TrainConfig", "build_kfan",
    "finetune", "forward_multiview", "forward_restore", "load_checkpoint", "load_config",
    "mean_field_posterior", "parse_config", "pretrain_kfan", "save_checkpoint",
]
