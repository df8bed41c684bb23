"""Tabular one-step actor-critic: softmax logits, a value table, the
entropy bonus and the KL proximal step used by penalized fine-tuning.

Every table is indexed by a leading "key" (skill, context bucket, ...)
followed by the state; the learners only ever see flat integer keys so the
same code serves state-only, skill-conditioned and controller policies.
"""

from __future__ import annotations

import itertools

import numpy as np

from ..mdp import Embodiment, ModelError, RewardTable, TabularPolicy, softmax


def _cdf(probs: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    cdf[..., -1] = 1.0
    return cdf


class Sampler:
    """Inverse-CDF sampling from a fixed table of distributions.

    ``draw(row, u)`` maps a uniform draw to an index; rows are any leading
    index tuple into the table.
    """

    def __init__(self, probs: np.ndarray):
        self.cdf = _cdf(np.asarray(probs, dtype=float))

    def draw(self, row, u: float) -> int:
        return int(np.searchsorted(self.cdf[row], u, side="right"))


class ActorCritic:
    """Softmax actor over ``(*lead, S, A)`` logits and a critic over
    ``(*lead, S)``.

    ``actor_step`` performs one policy-gradient step with an entropy bonus;
    with ``anchor`` and ``kl_weight > 0`` it also applies the proximal map of
    ``kl_weight * KL(anchor(.|s) || pi(.|s))`` so large weights stay stable.
    """

    def __init__(self, shape, actor_lr=0.1, critic_lr=0.2, entropy=0.01, logits=None):
        shape = tuple(shape)
        self.logits = np.zeros(shape) if logits is None else np.array(logits, dtype=float)
        if self.logits.shape != shape:
            raise ModelError(f"logits shape {self.logits.shape} != {shape}")
        self.values = np.zeros(shape[:-1])
        self.probs = softmax(self.logits)
        self.cdf = _cdf(self.probs)
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        self.entropy = entropy
        self.anchor = None
        self.kl_weight = 0.0

    @property
    def num_actions(self) -> int:
        return self.logits.shape[-1]

    def act(self, key, u: float) -> int:
        return int(np.searchsorted(self.cdf[key], u, side="right"))

    def critic_step(self, key, target: float) -> float:
        """Move ``V[key]`` toward ``target``; returns the TD error."""
        delta = target - self.values[key]
        self.values[key] += self.critic_lr * delta
        return float(delta)

    def actor_step(self, key, action: int, advantage: float) -> None:
        pi = self.probs[key]
        with np.errstate(divide="ignore"):
            log_pi = np.where(pi > 0, np.log(pi), 0.0)
        ent = -float(pi @ log_pi)
        grad = -advantage * pi
        grad[action] += advantage
        grad -= self.entropy * pi * (log_pi + ent)
        row = self.logits[key] + self.actor_lr * grad
        if self.anchor is not None and self.kl_weight > 0:
            row = kl_prox(row, self.anchor[key], self.actor_lr * self.kl_weight)
        self.logits[key] = row
        self.probs[key] = softmax(row)
        self.cdf[key] = _cdf(self.probs[key])

    def td_update(self, key, action: int, reward: float, next_key, discount: float) -> float:
        """One-step actor-critic update on ``(key, action, reward, next_key)``.

        ``next_key=None`` marks a true terminal; time-limit truncation should
        pass the next key so the critic bootstraps through it.
        """
        bootstrap = 0.0 if next_key is None else discount * self.values[next_key]
        delta = self.critic_step(key, reward + bootstrap)
        self.actor_step(key, action, delta)
        return delta

    def set_anchor(self, anchor_probs: np.ndarray | None, kl_weight: float) -> None:
        if kl_weight < 0:
            raise ModelError("the KL weight must be non-negative")
        if anchor_probs is not None and anchor_probs.shape != self.logits.shape:
            raise ModelError("anchor policy must match the actor's shape")
        self.anchor = None if anchor_probs is None else np.array(anchor_probs, dtype=float)
        self.kl_weight = float(kl_weight)

    def check_rows(self, tol: float = 1e-9) -> None:
        sums = self.probs.sum(axis=-1)
        if np.any(self.probs < 0) or np.max(np.abs(sums - 1.0)) > tol:
            raise ModelError("policy rows left the simplex")

    def state_dict(self) -> dict:
        return {"logits": self.logits.copy(), "values": self.values.copy()}

    def load_state_dict(self, state: dict) -> None:
        self.logits = np.array(state["logits"], dtype=float)
        self.values = np.array(state["values"], dtype=float)
        self.probs = softmax(self.logits)
        self.cdf = _cdf(self.probs)


def kl_prox(v: np.ndarray, anchor: np.ndarray, weight: float, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """``argmin_x 0.5 ||x - v||^2 + weight * KL(anchor || softmax(x))``.

    The objective is strongly convex with gradient
    ``x - v + weight (softmax(x) - anchor)``; damped Newton from ``v``.
    """
    if weight == 0:
        return v.copy()
    x = v.copy()

    def obj(z):
        top = z.max()
        lse = top + np.log(np.exp(z - top).sum())
        return 0.5 * float((z - v) @ (z - v)) + weight * (lse - float(anchor @ z))

    f = obj(x)
    for _ in range(max_iter):
        p = softmax(x)
        g = x - v + weight * (p - anchor)
        if np.max(np.abs(g)) <= tol * (1.0 + weight):
            break
        hess = np.eye(x.size) + weight * (np.diag(p) - np.outer(p, p))
        step = np.linalg.solve(hess, g)
        t, slope = 1.0, float(g @ step)
        while True:
            cand = x - t * step
            fc = obj(cand)
            if fc <= f - 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        x, f = cand, fc
    return x


def entropy_gradient(logits_row: np.ndarray) -> np.ndarray:
    """Gradient of the row entropy with respect to its logits."""
    pi = softmax(logits_row)
    log_pi = np.log(pi)
    return -pi * (log_pi + float(-(pi @ log_pi)))


# Exact policy-gradient references on tiny instances.

def analytic_return_gradient(emb: Embodiment, logits: np.ndarray, reward, gamma: float, horizon: int) -> np.ndarray:
    """Exact gradient of ``E[sum_{t<H} gamma^t R(s_t)]`` with respect to
    state-only softmax logits, by backward recursion over the horizon."""
    reward = reward.values if isinstance(reward, RewardTable) else np.asarray(reward, dtype=float)
    pi = softmax(logits)
    p_u = emb.unified_transition
    n_s, n_a = pi.shape
    # value-to-go tables: v[k] is the value with k steps left
    v = [np.zeros(n_s)]
    q = [None]
    for k in range(1, horizon + 1):
        qk = reward[:, None] + gamma * np.einsum("sat,t->sa", p_u, v[k - 1])
        q.append(qk)
        v.append(np.einsum("sa,sa->s", pi, qk))
    # q with k steps left pays R(s) now, so the action at time t acts through q[H-t]
    grad = np.zeros((n_s, n_a))
    marginal = emb.initial_dist.copy()
    p_pi = emb.state_transition(pi)
    weight = 1.0
    for t in range(horizon):
        qk = q[horizon - t]
        adv = qk - np.einsum("sa,sa->s", pi, qk)[:, None]
        grad += weight * marginal[:, None] * pi * adv
        marginal = marginal @ p_pi
        weight *= gamma
    return grad


def reinforce_gradient_by_enumeration(emb: Embodiment, logits: np.ndarray, reward, gamma: float,
                                      horizon: int) -> np.ndarray:
    """Expectation of the score-function estimator
    ``sum_t gamma^t G_t grad log pi(a_t|s_t)`` over every episode of length
    ``horizon``, where ``G_t`` is the discounted reward-to-go from ``s_t``."""
    reward = reward.values if isinstance(reward, RewardTable) else np.asarray(reward, dtype=float)
    pi = softmax(logits)
    p_u = emb.unified_transition
    n_s, n_a = pi.shape
    grad = np.zeros((n_s, n_a))
    # the state reached after the last action earns nothing inside the horizon
    for s0 in range(n_s):
        if emb.initial_dist[s0] == 0:
            continue
        for steps in itertools.product(range(n_a), range(n_s), repeat=horizon):
            actions, states = steps[0::2], (s0,) + steps[1::2]
            prob = emb.initial_dist[s0]
            for t in range(horizon):
                prob *= pi[states[t], actions[t]] * p_u[states[t], actions[t], states[t + 1]]
                if prob == 0:
                    break
            if prob == 0:
                continue
            rewards = np.array([gamma**t * reward[states[t]] for t in range(horizon)])
            to_go = np.cumsum(rewards[::-1])[::-1]
            for t in range(horizon):
                score = -pi[states[t]].copy()
                score[actions[t]] += 1.0
                grad[states[t]] += prob * to_go[t] * score
    return grad


def policy_from_logits(logits: np.ndarray, mode: str = "state") -> TabularPolicy:
    return TabularPolicy(softmax(logits), mode)
