"""Finite CE-MDPs: embodiments, unified policies, occupancies and returns.

All embodiments of a set share one global state index space (the union of
their state spaces). Each embodiment maps the shared unified action set onto
its own native actions through a fixed projector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Log-probability of an impossible event. It absorbs under addition and is
# the identity of log-sum-exp.
IMPOSSIBLE = -math.inf

ROW_TOL = 1e-12

POLICY_MODES = {"state": 0, "skill": 1, "context": 1, "skill-context": 2}


class ModelError(ValueError):
    """Raised when an MDP object violates its structural invariants."""


def _check_distribution(p: np.ndarray, tol: float, what: str) -> None:
    if not np.all(np.isfinite(p)):
        raise ModelError(f"{what} contains non-finite entries")
    if np.any(p < 0):
        raise ModelError(f"{what} has negative entries")
    sums = p.sum(axis=-1)
    bad = np.abs(sums - 1.0) > tol
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ModelError(f"{what} row {idx} sums to {sums[idx]!r}, not 1")


@dataclass(frozen=True, eq=False)
class Embodiment:
    """One controlled MDP of a CE-MDP.

    ``transition[s, native_a, s']`` is the native dynamics and
    ``action_projector[a]`` is the native action executed for unified action
    ``a``.
    """

    id: int
    transition: np.ndarray
    initial_dist: np.ndarray
    action_projector: np.ndarray

    def __post_init__(self):
        transition = np.asarray(self.transition, dtype=float)
        initial = np.asarray(self.initial_dist, dtype=float)
        projector = np.asarray(self.action_projector, dtype=np.int64)
        if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
            raise ModelError(f"transition must have shape (S, A, S), got {transition.shape}")
        if initial.shape != (transition.shape[0],):
            raise ModelError("initial_dist length must equal the number of states")
        if projector.ndim != 1 or projector.size == 0:
            raise ModelError("action_projector must be a nonempty 1-d index map")
        if projector.min() < 0 or projector.max() >= transition.shape[1]:
            raise ModelError("action_projector maps outside the native action set")
        _check_distribution(transition, ROW_TOL, f"embodiment {self.id} transition")
        _check_distribution(initial, ROW_TOL, f"embodiment {self.id} initial_dist")
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "initial_dist", initial)
        object.__setattr__(self, "action_projector", projector)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def unified_transition(self) -> np.ndarray:
        """Dynamics indexed by unified action, shape (S, A_unified, S)."""
        return self.transition[:, self.action_projector, :]

    def state_transition(self, action_probs: np.ndarray) -> np.ndarray:
        """State-to-state kernel induced by a state-only policy table."""
        return np.einsum("sa,sat->st", action_probs, self.unified_transition)


@dataclass(frozen=True, eq=False)
class EmbodimentSet:
    embodiments: tuple
    prior: np.ndarray
    unified_num_actions: int
    discount: float = 0.9

    def __post_init__(self):
        embodiments = tuple(self.embodiments)
        prior = np.asarray(self.prior, dtype=float)
        if not embodiments:
            raise ModelError("an embodiment set needs at least one embodiment")
        ids = [e.id for e in embodiments]
        if len(set(ids)) != len(ids):
            raise ModelError(f"embodiment ids must be unique, got {ids}")
        if prior.shape != (len(embodiments),):
            raise ModelError("prior must have one entry per embodiment")
        _check_distribution(prior, ROW_TOL, "embodiment prior")
        if not 0.0 < self.discount < 1.0:
            raise ModelError(f"discount must lie strictly inside (0, 1), got {self.discount}")
        sizes = {e.num_states for e in embodiments}
        if len(sizes) != 1:
            raise ModelError("embodiments must share the union state index space")
        for e in embodiments:
            if e.action_projector.size != self.unified_num_actions:
                raise ModelError(
                    f"embodiment {e.id} projector covers {e.action_projector.size} "
                    f"unified actions, expected {self.unified_num_actions}"
                )
        object.__setattr__(self, "embodiments", embodiments)
        object.__setattr__(self, "prior", prior)

    def __len__(self) -> int:
        return len(self.embodiments)

    def __iter__(self):
        return iter(self.embodiments)

    @property
    def num_states(self) -> int:
        return self.embodiments[0].num_states

    @property
    def ids(self) -> list[int]:
        return [e.id for e in self.embodiments]

    def position(self, embodiment_id: int) -> int:
        for i, e in enumerate(self.embodiments):
            if e.id == embodiment_id:
                return i
        raise KeyError(f"no embodiment with id {embodiment_id}")

    def embodiment(self, embodiment_id: int) -> Embodiment:
        return self.embodiments[self.position(embodiment_id)]

    def with_discount(self, discount: float) -> "EmbodimentSet":
        return EmbodimentSet(self.embodiments, self.prior, self.unified_num_actions, discount)


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Action distributions over unified actions.

    ``probs`` has shape ``lead + (S, A)`` where the leading axes depend on the
    mode: none for ``state``, ``(K,)`` for ``skill``, ``(C,)`` for
    ``context`` and ``(K, C)`` for ``skill-context``.
    """

    probs: np.ndarray
    mode: str = "state"

    def __post_init__(self):
        if self.mode not in POLICY_MODES:
            raise ModelError(f"unknown policy mode {self.mode!r}")
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 2 + POLICY_MODES[self.mode]:
            raise ModelError(f"mode {self.mode!r} expects {2 + POLICY_MODES[self.mode]}-d probs")
        _check_distribution(probs, ROW_TOL, "policy")
        object.__setattr__(self, "probs", probs)

    @property
    def num_states(self) -> int:
        return self.probs.shape[-2]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[-1]

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "TabularPolicy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def deterministic(cls, actions: Sequence[int], num_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=np.int64)
        return cls(np.eye(num_actions)[actions])

    @classmethod
    def from_logits(cls, logits: np.ndarray, mode: str = "state") -> "TabularPolicy":
        return cls(softmax(logits), mode)

    def state_policy(self, skill: int | None = None, context: int | None = None) -> "TabularPolicy":
        """The state-only slice for a fixed skill and/or context bucket."""
        if self.mode == "state":
            return self
        if self.mode == "skill":
            return TabularPolicy(self.probs[_required(skill, "skill")])
        if self.mode == "context":
            return TabularPolicy(self.probs[_required(context, "context")])
        return TabularPolicy(self.probs[_required(skill, "skill"), _required(context, "context")])


def _required(value, name):
    if value is None:
        raise ModelError(f"this policy is conditioned on {name}; pass {name}=...")
    return value


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``s_0..s_L`` and unified actions ``a_0..a_{L-1}``.

    The embodiment label is for the trainer; policies never see it.
    """

    embodiment_id: int
    states: np.ndarray
    actions: np.ndarray
    skill_id: int | None = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64)
        actions = np.asarray(self.actions, dtype=np.int64)
        if states.ndim != 1 or actions.ndim != 1 or states.size != actions.size + 1:
            raise ModelError("a trajectory needs exactly one more state than actions")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)

    @property
    def length(self) -> int:
        return int(self.actions.size)

    def transitions(self):
        for t in range(self.length):
            yield int(self.states[t]), int(self.actions[t]), int(self.states[t + 1])


@dataclass(frozen=True)
class OccupancyMeasure:
    dist: np.ndarray
    discount: float

    def __post_init__(self):
        dist = np.asarray(self.dist, dtype=float)
        if abs(dist.sum() - 1.0) > 1e-10 or np.any(dist < -1e-12):
            raise ModelError("occupancy is not a probability vector")
        object.__setattr__(self, "dist", dist)


@dataclass(frozen=True)
class RewardTable:
    """State-indexed reward, or trajectory-indexed for the oracles."""

    values: np.ndarray
    name: str = field(default="reward", compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise ModelError("reward values must be finite")
        object.__setattr__(self, "values", values)


def _check_gamma(gamma: float) -> None:
    if not 0.0 < gamma < 1.0:
        raise ModelError(f"discount must lie strictly inside (0, 1), got {gamma}")


def _state_only(policy: TabularPolicy) -> np.ndarray:
    if policy.mode != "state":
        raise ModelError("this operation needs a state-only policy; use policy.state_policy(...)")
    return policy.probs


def occupancy(emb: Embodiment, policy: TabularPolicy, gamma: float) -> OccupancyMeasure:
    """Discounted state distribution by a dense solve of
    ``d = (1 - gamma) mu0 + gamma P_pi^T d``."""
    _check_gamma(gamma)
    p_pi = emb.state_transition(_state_only(policy))
    lhs = np.eye(emb.num_states) - gamma * p_pi.T
    d = np.linalg.solve(lhs, (1.0 - gamma) * emb.initial_dist)
    return OccupancyMeasure(d, gamma)


def mixture_occupancy(
    eset: EmbodimentSet, policy: TabularPolicy, gamma: float | None = None
) -> OccupancyMeasure:
    gamma = eset.discount if gamma is None else gamma
    dists = np.array([occupancy(e, policy, gamma).dist for e in eset])
    return OccupancyMeasure(eset.prior @ dists, gamma)


def trajectory_logprob(emb: Embodiment, policy: TabularPolicy, traj: Trajectory) -> float:
    """``log mu0(s0) + sum_t [log pi(a_t|s_t) + log P_e(s_{t+1}|s_t, phi_e(a_t))]``."""
    probs = _state_only(policy)
    p_u = emb.unified_transition
    total = _log(emb.initial_dist[traj.states[0]])
    for s, a, s_next in traj.transitions():
        if total == IMPOSSIBLE:
            break
        total += _log(probs[s, a]) + _log(p_u[s, a, s_next])
    return total


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else IMPOSSIBLE


def log_mix(log_weights: np.ndarray, log_values: np.ndarray) -> float:
    """``log sum_i exp(log_weights[i] + log_values[i])`` with -inf entries allowed."""
    terms = np.asarray(log_weights, dtype=float) + np.asarray(log_values, dtype=float)
    top = np.max(terms)
    if top == IMPOSSIBLE:
        return IMPOSSIBLE
    return float(top + math.log(np.sum(np.exp(terms - top))))


def mixture_trajectory_logprob(eset: EmbodimentSet, policy: TabularPolicy, traj: Trajectory) -> float:
    """Log-probability of ``traj`` under the average embodiment MDP."""
    with np.errstate(divide="ignore"):
        log_prior = np.log(eset.prior)
    return log_mix(log_prior, [trajectory_logprob(e, policy, traj) for e in eset])


def expected_return(emb: Embodiment, policy: TabularPolicy, reward: RewardTable, gamma: float) -> float:
    """Discounted return of a state-based reward, ``<d, R> / (1 - gamma)``."""
    reward = reward if isinstance(reward, RewardTable) else RewardTable(reward)
    d = occupancy(emb, policy, gamma).dist
    return float(d @ reward.values) / (1.0 - gamma)


def truncated_return(
    emb: Embodiment, policy: TabularPolicy, reward: RewardTable, gamma: float, horizon: int
) -> float:
    """Exact ``E[sum_{t<horizon} gamma^t R(s_t)]`` by propagating state marginals."""
    reward = reward if isinstance(reward, RewardTable) else RewardTable(reward)
    p_pi = emb.state_transition(_state_only(policy))
    marginal = emb.initial_dist.copy()
    total, weight = 0.0, 1.0
    for _ in range(horizon):
        total += weight * float(marginal @ reward.values)
        marginal = marginal @ p_pi
        weight *= gamma
    return total


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def rollout(
    eset: EmbodimentSet,
    policy: TabularPolicy,
    embodiment_id: int,
    horizon: int,
    seed=None,
    skill: int | None = None,
) -> Trajectory:
    """Simulate ``horizon`` steps of ``policy`` on one embodiment.

    ``seed`` may be an int or a ``numpy.random.Generator``; a fixed int seed
    gives a bit-identical trajectory.
    """
    if horizon < 1:
        raise ModelError("horizon must be at least 1")
    rng = as_generator(seed)
    emb = eset.embodiment(embodiment_id)
    probs = policy.state_policy(skill=skill).probs if policy.mode == "skill" else _state_only(policy)
    p_u = emb.unified_transition
    states = np.empty(horizon + 1, dtype=np.int64)
    actions = np.empty(horizon, dtype=np.int64)
    states[0] = rng.choice(emb.num_states, p=emb.initial_dist)
    for t in range(horizon):
        s = states[t]
        actions[t] = rng.choice(probs.shape[1], p=probs[s])
        states[t + 1] = rng.choice(emb.num_states, p=p_u[s, actions[t]])
    return Trajectory(embodiment_id, states, actions, skill)
