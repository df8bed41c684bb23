from __future__ import annotations

import itertools
import math

import numpy as np

from ..mdp import EmbodimentSet, ModelError, RewardTable, TabularPolicy, expected_return, occupancy, truncated_return
from .backbone import _cdf
from .meta import MetaController, controller_episode
from .peac import AgentState, _skill_episode, _tables, stage_streams

DEFAULT_HORIZON = 40


def _mc_state_only(emb, probs: np.ndarray, reward: np.ndarray, gamma: float, horizon: int, episodes: int, rng):
    """Discounted returns of ``episodes`` parallel rollouts."""
    p_cdf = _cdf(emb.unified_transition)
    pi_cdf = _cdf(probs)
    mu_cdf = _cdf(emb.initial_dist)
    s = np.minimum(np.searchsorted(mu_cdf, rng.random(episodes), side="right"), emb.num_states - 1)
    total = np.zeros(episodes)
    weight = 1.0
    for _ in range(horizon):
        total += weight * reward[s]
        u = rng.random((episodes, 2))
        a = (pi_cdf[s] <= u[:, :1]).sum(axis=1)
        s = (p_cdf[s, a] <= u[:, 1:]).sum(axis=1)
        weight *= gamma
    return total


def evaluate(source, eset: EmbodimentSet, extrinsic, episodes: int = 1000, seed: int = 0,
             horizon: int | None = None, gamma: float | None = None, skill: int | None = None) -> dict:
    """Per-embodiment returns of a frozen policy.

    ``source`` is a state-only ``TabularPolicy``, an ``AgentState`` (skill
    agents need ``skill=``) or a ``MetaController``. Every entry holds the
    Monte-Carlo mean and standard error of ``sum_{t<H} gamma^t R(s_t)``; for
    state-only policies it also holds the exact finite-horizon value
    (``analytic``) and the infinite-horizon one (``analytic_infinite``).
    Context-conditioned behavior has no state-only form, so those two are
    ``None`` there.
    """
    if episodes < 2:
        raise ModelError("evaluate needs at least 2 episodes for a standard error")
    reward = extrinsic.values if isinstance(extrinsic, RewardTable) else np.asarray(extrinsic, dtype=float)
    if reward.shape != (eset.num_states,):
        raise ModelError(f"reward table has shape {reward.shape}, expected ({eset.num_states},)")
    config = getattr(source, "config", None)
    horizon = (config.horizon if config is not None else DEFAULT_HORIZON) if horizon is None else horizon
    gamma = (config.gamma if config is not None else eset.discount) if gamma is None else gamma
    state_probs = None
    if isinstance(source, TabularPolicy):
        state_probs = source.state_policy().probs
    elif isinstance(source, AgentState) and source.kind == "peac":
        state_probs = source.actor.probs
    elif isinstance(source, AgentState):
        if skill is None:
            raise ModelError("evaluating a skill agent needs skill=...")
    elif not isinstance(source, MetaController):
        raise ModelError(f"cannot evaluate {type(source).__name__}")
    streams = stage_streams(seed, "evaluate", len(eset))
    tables = _tables(eset)
    out = {}
    for k, emb in enumerate(eset):
        rng = streams[k]
        if state_probs is not None:
            returns = _mc_state_only(emb, state_probs, reward, gamma, horizon, episodes, rng)
        else:
            returns = np.empty(episodes)
            discounts = gamma ** np.arange(horizon)
            for i in range(episodes):
                if isinstance(source, MetaController):
                    states, _ = controller_episode(source, tables[k], horizon, rng, reward, gamma,
                                                   source.config.skill_horizon)
                    states = np.array(states)
                else:
                    states, _, _ = _skill_episode(*tables[k], source.actor.cdf, skill, horizon, rng,
                                                  source.discriminator, source.config.context_threshold,
                                                  source.num_states, source.num_actions)
                returns[i] = discounts @ reward[states[:-1]]
        entry = {
            "mc_mean": float(returns.mean()),
            "mc_stderr": float(returns.std(ddof=1) / math.sqrt(episodes)),
            "analytic": None,
            "analytic_infinite": None,
        }
        if state_probs is not None:
            pi = TabularPolicy(state_probs)
            entry["analytic"] = truncated_return(emb, pi, RewardTable(reward), gamma, horizon)
            entry["analytic_infinite"] = expected_return(emb, pi, RewardTable(reward), gamma)
        out[emb.id] = entry
    return out


def skill_occupancies(agent: AgentState, eset: EmbodimentSet, embodiment_id: int | None = None,
                      context: int | None = None, gamma: float | None = None) -> np.ndarray:
    """Analytic occupancy of every skill's policy slice, shape (K, S).

    The context bucket is held fixed: by default the bucket of the
    embodiment itself (a confident discriminator).
    """
    if agent.kind != "peac-diayn":
        raise ModelError("skill occupancies need a skill-conditioned agent")
    eid = eset.ids[0] if embodiment_id is None else embodiment_id
    emb = eset.embodiment(eid)
    if context is None:
        context = agent.ids.index(eid) if eid in agent.ids else agent.num_contexts - 1
    gamma = eset.discount if gamma is None else gamma
    return np.array([occupancy(emb, TabularPolicy(agent.actor.probs[z, context]), gamma).dist
                     for z in range(agent.num_skills)])


def mean_pairwise_l1(occupancies: np.ndarray) -> float:
    pairs = list(itertools.combinations(range(len(occupancies)), 2))
    if not pairs:
        raise ModelError("pairwise distances need at least two rows")
    return float(np.mean([np.abs(occupancies[i] - occupancies[j]).sum() for i, j in pairs]))
