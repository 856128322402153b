"""服务层"""

from .likelihood_service import LikelihoodService, score_array, score_batch
from .optimizer import TrainState, apply_adamw, lr_at
from .trainer_service import TrainerService, fit

__all__ = [
    "TrainerService",
    "LikelihoodService",
    "TrainState",
    "apply_adamw",
    "lr_at",
    "fit",
    "score_array",
    "score_batch",
]
