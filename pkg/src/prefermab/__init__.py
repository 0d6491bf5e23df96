"""Pretrained, feature-conditioned policies for streaming restless bandits."""
__version__ = "0.1.0"

from .core import ActionCosts, ArmModel, RmabInstance  # noqa: E402
from .engine import Checkpoint, EvalReport, TrainConfig, evaluate, finetune, pretrain  # noqa: E402

__all__ = ["ActionCosts", "ArmModel", "RmabInstance", "Checkpoint", "EvalReport", "TrainConfig",
           "evaluate", "finetune", "pretrain", "__version__"]
