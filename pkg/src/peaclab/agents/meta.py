"""Embodiment-aware meta-controller: picks a skill from (context, state)
and lets the frozen skill policy act for a fixed number of steps."""

from __future__ import annotations

import math

import numpy as np

from ..mdp import EmbodimentSet, ModelError, RewardTable
from .backbone import ActorCritic
from .config import TrainConfig
from .peac import AgentState, _record, _tables, stage_streams, weighted_round_robin


class MetaController:
    """Skill distribution ``probs[c, s, z]`` over context buckets and states,
    with the frozen skill agent it drives."""

    def __init__(self, behavior: AgentState, config: TrainConfig, logits=None):
        if behavior.kind != "peac-diayn":
            raise ModelError("a meta-controller needs a skill-conditioned agent")
        self.behavior = behavior
        self.config = config
        shape = (behavior.num_contexts, behavior.num_states, behavior.num_skills)
        self.learner = ActorCritic(shape, config.actor_lr, config.critic_lr, config.entropy, logits=logits)
        self.steps = 0
        self.curve = []

    @property
    def probs(self) -> np.ndarray:
        return self.learner.probs

    def state_dict(self) -> dict:
        return {"meta." + k: v for k, v in self.learner.state_dict().items()}

    def load_state_dict(self, state: dict) -> None:
        self.learner.load_state_dict({"logits": state["meta.logits"], "values": state["meta.values"]})


def controller_episode(controller: MetaController, tables, horizon: int, rng, reward: np.ndarray, gamma: float,
                       sub_horizon: int):
    """One episode; returns the states and the skill decisions as tuples
    ``(context, state, skill, discounted_reward, duration, next_context, next_state)``."""
    agent = controller.behavior
    disc, threshold = agent.discriminator, agent.config.context_threshold
    p_cdf, mu_cdf = tables
    n_s, n_a = agent.num_states, agent.num_actions
    u = rng.random(3 * horizon + 1)
    window = np.full(disc.history, -1, dtype=np.int64)
    single = disc.num_classes == 1

    def bucket():
        if single:
            return 0
        lp = disc.log_probs(window)[0]
        best = int(np.argmax(lp))
        return best if math.exp(lp[best]) >= threshold else disc.num_classes

    s = int(np.searchsorted(mu_cdf, u[0], side="right"))
    states = [s]
    decisions = []
    t = 0
    c = bucket()
    while t < horizon:
        c0, s0 = c, s
        z = controller.learner.act((c, s), u[3 * t + 1])
        duration = min(sub_horizon, horizon - t)
        gain = 0.0
        for i in range(duration):
            gain += gamma**i * reward[s]
            a = int(np.searchsorted(agent.actor.cdf[z, c, s], u[3 * t + 2], side="right"))
            s_next = int(np.searchsorted(p_cdf[s, a], u[3 * t + 3], side="right"))
            window[:-1] = window[1:]
            window[-1] = (s * n_a + a) * n_s + s_next
            s = s_next
            c = bucket()
            states.append(s)
            t += 1
        decisions.append((c0, s0, z, gain, duration, c, s))
    return states, decisions


def finetune_meta_controller(state: AgentState, eset: EmbodimentSet, extrinsic: RewardTable,
                             config: TrainConfig | None = None) -> MetaController:
    """Semi-Markov actor-critic over skill choices, behavior frozen.

    Each decision earns the discounted extrinsic reward collected while the
    chosen skill runs for ``config.skill_horizon`` steps and bootstraps with
    ``gamma ** duration``.
    """
    if state.kind != "peac-diayn":
        raise ModelError("finetune_meta_controller needs a skill-conditioned agent")
    config = state.config if config is None else config
    reward = extrinsic.values if isinstance(extrinsic, RewardTable) else np.asarray(extrinsic, dtype=float)
    if reward.shape != (eset.num_states,):
        raise ModelError(f"reward table has shape {reward.shape}, expected ({eset.num_states},)")
    controller = MetaController(state, config)
    learner = controller.learner
    streams = stage_streams(config.seed, "meta", len(eset))
    tables = _tables(eset)
    credit = np.zeros(len(eset))
    discounts = config.gamma ** np.arange(config.horizon)
    while controller.steps < config.finetune_steps:
        slots = weighted_round_robin(eset.prior, credit)
        episodes = [controller_episode(controller, tables[k], config.horizon, streams[k], reward, config.gamma,
                                       config.skill_horizon) for k in slots]
        returns = []
        for states, decisions in episodes:
            returns.append(float(discounts @ reward[np.array(states[:-1])]))
            for c0, s0, z, gain, duration, c1, s1 in decisions:
                target = gain + config.gamma**duration * learner.values[c1, s1]
                delta = learner.critic_step((c0, s0), target)
                learner.actor_step((c0, s0), z, delta)
        if config.debug:
            learner.check_rows()
        controller.steps += len(episodes) * config.horizon
        _record(controller.curve, controller.steps, episode_return=float(np.mean(returns)))
    return controller
