"""Learning loops on top of the tabular actor-critic backbone."""

from .backbone import ActorCritic, analytic_return_gradient, kl_prox, reinforce_gradient_by_enumeration
from .buffers import ReplayBuffer
from .config import TrainConfig
from .evaluate import evaluate, mean_pairwise_l1, skill_occupancies
from .meta import MetaController, finetune_meta_controller
from .peac import (
    FINETUNE_MODES,
    AgentState,
    finetune,
    fresh_agent,
    pretrain_peac,
    pretrain_peac_diayn,
    stage_streams,
)

__all__ = [
    "ActorCritic",
    "AgentState",
    "FINETUNE_MODES",
    "MetaController",
    "ReplayBuffer",
    "TrainConfig",
    "analytic_return_gradient",
    "evaluate",
    "finetune",
    "finetune_meta_controller",
    "fresh_agent",
    "kl_prox",
    "mean_pairwise_l1",
    "pretrain_peac",
    "pretrain_peac_diayn",
    "reinforce_gradient_by_enumeration",
    "skill_occupancies",
    "stage_streams",
]
