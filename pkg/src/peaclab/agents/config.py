from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from ..mdp import ModelError
from ..rewards import IntrinsicRewardSpec


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters shared by every training loop.

    Step budgets count environment transitions summed over embodiments.
    Rounds always finish their episodes, so a run may overshoot its budget
    by less than one round.
    """

    pretrain_steps: int = 20_000
    finetune_steps: int | None = None  # defaults to pretrain_steps // 10
    horizon: int = 40
    actor_lr: float = 0.1
    critic_lr: float = 0.2
    disc_lr: float = 0.5
    disc_l2: float = 1e-4
    disc_steps: int = 1
    disc_batch: int = 64  # windows per embodiment per discriminator step
    entropy: float = 0.01
    gamma: float = 0.99
    beta: float = 0.0
    seed: int = 0
    reward: IntrinsicRewardSpec = field(default_factory=IntrinsicRewardSpec)
    history: int = 8
    buffer_size: int = 512
    context_threshold: float = 0.6
    skills: int = 4
    skill_lr: float = 0.5
    skill_steps: int = 1
    skill_horizon: int = 5
    surprise_alpha: float = 1.0
    debug: bool = False

    def __post_init__(self):
        if self.finetune_steps is None:
            object.__setattr__(self, "finetune_steps", self.pretrain_steps // 10)
        for name in ("pretrain_steps", "horizon", "disc_steps", "disc_batch", "history", "buffer_size",
                     "skill_steps", "skill_horizon"):
            if int(getattr(self, name)) < 1:
                raise ModelError(f"{name} must be at least 1")
        if self.finetune_steps < 0 or self.finetune_steps > self.pretrain_steps:
            raise ModelError("finetune_steps must lie in [0, pretrain_steps]")
        for name in ("actor_lr", "critic_lr", "disc_lr", "skill_lr", "surprise_alpha"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ModelError(f"{name} must be a positive finite number")
        if self.entropy < 0 or self.disc_l2 < 0 or self.beta < 0:
            raise ModelError("entropy, disc_l2 and beta must be non-negative")
        if not 0.0 < self.gamma < 1.0:
            raise ModelError("gamma must lie strictly inside (0, 1)")
        if not 0.0 < self.context_threshold <= 1.0:
            raise ModelError("context_threshold must lie in (0, 1]")
        if self.skills < 1:
            raise ModelError("skills must be positive")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["reward"] = {"kind": self.reward.kind, "weights": dict(self.reward.weights),
                         "skill_count": self.reward.skill_count}
        return out
