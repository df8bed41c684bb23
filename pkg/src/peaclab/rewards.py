"""Intrinsic rewards: the cross-embodiment reward, Dirichlet Bayesian
surprise, the DIAYN skill reward and their weighted compositions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mdp import EmbodimentSet, ModelError, TabularPolicy
from .trajspace import skill_conditioned_probs

KINDS = {
    "CE": ("ce",),
    "LBS": ("lbs",),
    "DIAYN": ("diayn",),
    "CE+LBS": ("ce", "lbs"),
    "CE+DIAYN": ("ce", "diayn"),
}


@dataclass(frozen=True)
class IntrinsicRewardSpec:
    kind: str = "CE"
    weights: dict = field(default_factory=dict)
    skill_count: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown reward kind {self.kind!r}; expected one of {sorted(KINDS)}")
        unknown = set(self.weights) - set(self.components)
        if unknown:
            raise ModelError(f"weights given for components not in {self.kind}: {sorted(unknown)}")
        if not all(math.isfinite(float(w)) for w in self.weights.values()):
            raise ModelError("reward weights must be finite")
        if "diayn" in self.components and (self.skill_count is None or self.skill_count < 2):
            raise ModelError("DIAYN rewards need skill_count >= 2")

    @property
    def components(self) -> tuple:
        return KINDS[self.kind]

    def weight(self, component: str) -> float:
        return float(self.weights.get(component, 1.0))


def combined_reward(spec: IntrinsicRewardSpec, **components) -> float:
    """Weighted sum of the components named by ``spec`` (default weight 1)."""
    missing = [c for c in spec.components if c not in components]
    if missing:
        raise ModelError(f"missing reward components {missing}")
    return sum(spec.weight(c) * float(components[c]) for c in spec.components)


def r_ce_trajectory(eset: EmbodimentSet, q_log_posterior, embodiment_id: int) -> float:
    """``log p(e) - log q(e | tau)``; zero when the discriminator is at the prior."""
    q = np.asarray(q_log_posterior, dtype=float)
    k = eset.position(embodiment_id)
    if not np.all(np.isfinite(q)):
        raise ModelError("posterior log-probabilities must be finite")
    return math.log(eset.prior[k]) - float(q[k])


def r_ce_step(disc_output, eset: EmbodimentSet, embodiment_id: int) -> float:
    """Per-step variant fed with the discriminator output on the current window."""
    return r_ce_trajectory(eset, disc_output, embodiment_id)


class SurpriseModel:
    """Dirichlet(alpha) posterior over next states for every ``(s, a)`` row,
    with counts pooled across embodiments."""

    def __init__(self, num_states: int, num_actions: int, alpha: float = 1.0):
        if alpha <= 0:
            raise ModelError("alpha must be positive")
        self.alpha = alpha
        self.counts = np.zeros((num_states, num_actions, num_states))

    def predictive(self, s: int, a: int) -> np.ndarray:
        row = self.counts[s, a] + self.alpha
        return row / row.sum()

    def surprise(self, s: int, a: int, s_next: int) -> float:
        """KL(predictive after observing ``s_next`` || predictive before)."""
        row = self.counts[s, a] + self.alpha
        total = row.sum()
        before = row / total
        row = row.copy()
        row[s_next] += 1.0
        after = row / (total + 1.0)
        return float(np.sum(after * (np.log(after) - np.log(before))))

    def observe(self, s: int, a: int, s_next: int) -> None:
        self.counts[s, a, s_next] += 1.0


def r_surprise(model: SurpriseModel, transition) -> float:
    """Bayesian surprise of ``transition``; the model then ingests it."""
    s, a, s_next = (int(x) for x in transition)
    value = model.surprise(s, a, s_next)
    model.observe(s, a, s_next)
    return value


class SkillDiscriminator:
    """Softmax classifier over skills from a state one-hot, optionally
    extended with a context-bucket one-hot.

    In joint mode the outputs are the ``K x M`` (skill, embodiment) pairs,
    and skill log-probabilities are read either marginally or conditioned on
    one embodiment.
    """

    def __init__(self, num_states: int, num_skills: int, num_embodiments: int = 1,
                 joint: bool = False, num_contexts: int = 0, step_size: float = 0.5):
        self.num_states = num_states
        self.num_skills = num_skills
        self.num_embodiments = num_embodiments if joint else 1
        self.joint = joint
        self.num_contexts = num_contexts
        self.step_size = step_size
        outputs = num_skills * self.num_embodiments
        self.weights = np.zeros((outputs, num_states + num_contexts))
        self.bias = np.zeros(outputs)

    def _logits(self, states, contexts=None) -> np.ndarray:
        states = np.atleast_1d(states)
        z = self.bias + self.weights[:, states].T
        if self.num_contexts:
            z = z + self.weights[:, self.num_states + np.atleast_1d(contexts)].T
        return z

    def _log_joint(self, states, contexts=None) -> np.ndarray:
        z = self._logits(states, contexts)
        z = z - z.max(axis=1, keepdims=True)
        lp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return lp.reshape(-1, self.num_skills, self.num_embodiments)

    def skill_log_probs(self, states, embodiment=None, contexts=None) -> np.ndarray:
        """``log q(z | s)`` (marginal) or ``log q(z | s, e)``, shape (B, K)."""
        lj = self._log_joint(states, contexts)
        if embodiment is None:
            top = lj.max(axis=2, keepdims=True)
            return (top + np.log(np.exp(lj - top).sum(axis=2, keepdims=True)))[:, :, 0]
        col = lj[:, :, embodiment]
        top = col.max(axis=1, keepdims=True)
        return col - (top + np.log(np.exp(col - top).sum(axis=1, keepdims=True)))

    def train_step(self, states, skills, embodiments=None, contexts=None) -> float:
        states = np.atleast_1d(states)
        n = states.size
        labels = np.atleast_1d(skills) * self.num_embodiments
        if self.joint:
            labels = labels + np.atleast_1d(embodiments)
        lp = self._log_joint(states, contexts).reshape(n, -1)
        loss = -float(np.mean(lp[np.arange(n), labels]))
        dz = np.exp(lp)
        dz[np.arange(n), labels] -= 1.0
        dz /= n
        grad = np.zeros_like(self.weights)
        np.add.at(grad.T, states, dz)
        if self.num_contexts:
            np.add.at(grad.T, self.num_states + np.atleast_1d(contexts), dz)
        self.weights -= self.step_size * grad
        self.bias -= self.step_size * dz.sum(axis=0)
        return loss

    def state_dict(self) -> dict:
        return {"weights": self.weights.copy(), "bias": self.bias.copy()}

    def load_state_dict(self, state: dict) -> None:
        self.weights = np.array(state["weights"], dtype=float)
        self.bias = np.array(state["bias"], dtype=float)


def r_diayn_from_logprob(log_q: float, num_skills: int) -> float:
    return float(log_q) + math.log(num_skills)


def r_diayn(skill_disc: SkillDiscriminator, state: int, skill_id: int, num_skills: int,
            embodiment: int | None = None, context: int | None = None) -> float:
    """``log q(z | s) - log(1/K)``."""
    lq = skill_disc.skill_log_probs(state, embodiment, context)[0, skill_id]
    return r_diayn_from_logprob(lq, num_skills)


def skill_objective_terms(eset: EmbodimentSet, policy: TabularPolicy, skill_prior, horizon: int):
    """Exact embodiment-information and skill-information terms.

    Returns ``(E_e E_tau[log p(e|tau)/p(e)], E_e KL(p(tau,z|e) || p(z|e) p(tau|e)))``.
    """
    skill_prior = np.asarray(skill_prior, dtype=float)
    p_tze, _ = skill_conditioned_probs(eset, policy, horizon)
    p_te = np.einsum("z,ezt->et", skill_prior, p_tze)
    p_bar = eset.prior @ p_te
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio_e = np.where(p_te > 0, np.log(p_te) - np.log(p_bar), 0.0)
        mi_embodiment = float(np.sum(eset.prior[:, None] * p_te * log_ratio_e))
        log_ratio_z = np.where(p_tze > 0, np.log(p_tze) - np.log(p_te)[:, None, :], 0.0)
        joint = eset.prior[:, None, None] * skill_prior[None, :, None] * p_tze
        mi_skill = float(np.sum(joint * log_ratio_z))
    return mi_embodiment, mi_skill
