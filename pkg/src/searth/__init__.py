"""Earth-topology window transformer with relay autoregressive fine-tuning."""

from .errors import SearthError
from .model import ModelConfig, forward_step, init_params
from .training import TrainConfig, finetune_ar, finetune_rar, pretrain

__all__ = ["ModelConfig", "TrainConfig", "SearthError", "forward_step", "init_params", "pretrain",
           "finetune_ar", "finetune_rar"]
__version__ = "0.1.0"
