"""Exhaustive finite-horizon trajectory spaces.

A horizon-``L`` trajectory is ``(s_0, a_0, ..., s_{L-1}, a_{L-1}, s_L)``;
there are ``|S| * (|S| |A|)^L`` of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import EmbodimentSet, ModelError, TabularPolicy

MAX_TRAJECTORIES = 200_000


class SpaceTooLarge(ModelError):
    pass


@dataclass(frozen=True, eq=False)
class FiniteTrajectorySpace:
    horizon: int
    states: np.ndarray  # (T, L+1)
    actions: np.ndarray  # (T, L)
    log_probs: np.ndarray  # (M, T)
    prior: np.ndarray
    ids: tuple

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def mixture(self) -> np.ndarray:
        return self.prior @ self.probs

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def log_posterior(self) -> np.ndarray:
        """``log p(e | tau)`` for every embodiment and trajectory, shape (M, T).

        Trajectories impossible under every embodiment get ``nan``.
        """
        with np.errstate(divide="ignore", invalid="ignore"):
            joint = np.log(self.prior)[:, None] + self.log_probs
            top = joint.max(axis=0)
            lse = top + np.log(np.exp(joint - top).sum(axis=0))
            return joint - lse


def trajectory_count(num_states: int, num_actions: int, horizon: int) -> int:
    return num_states * (num_states * num_actions) ** horizon


def _grid(num_states: int, num_actions: int, horizon: int):
    dims = [num_states] + [num_actions, num_states] * horizon
    flat = np.arange(int(np.prod(dims)))
    digits = np.array(np.unravel_index(flat, dims)).T
    return digits[:, 0::2], digits[:, 1::2]


def log_probs_under(eset: EmbodimentSet, action_probs: np.ndarray, states: np.ndarray, actions: np.ndarray):
    """Per-embodiment log-probabilities of enumerated trajectories."""
    with np.errstate(divide="ignore"):
        log_pi = np.log(action_probs)
        policy_term = log_pi[states[:, :-1], actions].sum(axis=1) if actions.size else 0.0
        out = []
        for e in eset:
            lp = np.log(e.initial_dist)[states[:, 0]] + policy_term
            if actions.size:
                lp = lp + np.log(e.unified_transition)[states[:, :-1], actions, states[:, 1:]].sum(axis=1)
            out.append(lp)
    return np.array(out)


def enumerate_space(
    eset: EmbodimentSet, policy: TabularPolicy, horizon: int, skill: int | None = None
) -> FiniteTrajectorySpace:
    """Enumerate every horizon-``L`` trajectory with exact log-probabilities."""
    n_s, n_a = eset.num_states, eset.unified_num_actions
    count = trajectory_count(n_s, n_a, horizon)
    if count > MAX_TRAJECTORIES:
        raise SpaceTooLarge(f"{count} trajectories exceeds the guard of {MAX_TRAJECTORIES}")
    action_probs = policy.state_policy(skill=skill).probs
    states, actions = _grid(n_s, n_a, horizon)
    log_probs = log_probs_under(eset, action_probs, states, actions)
    return FiniteTrajectorySpace(horizon, states, actions, log_probs, eset.prior, tuple(eset.ids))


def skill_conditioned_probs(eset: EmbodimentSet, policy: TabularPolicy, horizon: int):
    """``p(tau | z, e)`` with shape (M, K, T) and the shared enumeration grid."""
    if policy.mode != "skill":
        raise ModelError("expected a skill-conditioned policy")
    spaces = [enumerate_space(eset, policy, horizon, skill=z) for z in range(policy.probs.shape[0])]
    probs = np.stack([sp.probs for sp in spaces], axis=1)
    return probs, spaces[0]


def kl(p: np.ndarray, q: np.ndarray) -> float:
    """``sum p log(p/q)`` over the support of ``p``."""
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))
