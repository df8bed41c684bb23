"""Embodiment inference: the exact Bayes posterior over embodiments and a
learned history-window classifier.

The learned classifier is log-linear in the transition counts of its window:
``log q(e | window) = b_e + (1/L) sum_{(s, a, s') in window} W[e, (s, a, s')] - log Z``.
The ``1/L`` scale keeps plain gradient descent stable when one transition
fills the whole window.
This is the functional form of the exact posterior restricted to the window,
so the exact windowed Bayes classifier is inside the model class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mdp import IMPOSSIBLE, EmbodimentSet, ModelError, TabularPolicy, Trajectory, trajectory_logprob

DEFAULT_HISTORY = 8
UNCERTAIN_THRESHOLD = 0.6


class ImpossibleEvidence(ModelError):
    """Every embodiment assigns zero probability to the observed evidence."""


def _normalize_log(log_w: np.ndarray) -> np.ndarray:
    top = np.max(log_w)
    if top == IMPOSSIBLE:
        raise ImpossibleEvidence("no embodiment can produce the observed evidence")
    shifted = log_w - top
    return shifted - math.log(np.sum(np.exp(shifted)))


@dataclass(frozen=True, eq=False)
class ExactPosterior:
    log_weights: np.ndarray
    prior: np.ndarray

    @classmethod
    def from_prior(cls, eset: EmbodimentSet) -> "ExactPosterior":
        with np.errstate(divide="ignore"):
            return cls(_normalize_log(np.log(eset.prior)), eset.prior)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_weights)


def posterior_update(post: ExactPosterior, eset: EmbodimentSet, policy, transition) -> ExactPosterior:
    """One Bayes step on ``(s, a, s')``.

    The unified policy contributes the same factor ``pi(a|s)`` to every
    embodiment, so it cancels and is not used; the argument is kept so call
    sites read like the likelihood they stand for.
    """
    s, a, s_next = (int(x) for x in transition)
    with np.errstate(divide="ignore"):
        lik = np.log([e.unified_transition[s, a, s_next] for e in eset])
    return ExactPosterior(_normalize_log(post.log_weights + lik), post.prior)


def observe_initial_state(post: ExactPosterior, eset: EmbodimentSet, state: int) -> ExactPosterior:
    """Bayes step on the initial state; a no-op when all embodiments share
    one initial distribution."""
    with np.errstate(divide="ignore"):
        lik = np.log([e.initial_dist[int(state)] for e in eset])
    return ExactPosterior(_normalize_log(post.log_weights + lik), post.prior)


def exact_posterior_of_trajectory(eset: EmbodimentSet, policy, traj: Trajectory) -> ExactPosterior:
    """Fold of single-transition Bayes updates along ``traj``."""
    post = observe_initial_state(ExactPosterior.from_prior(eset), eset, traj.states[0])
    for tr in traj.transitions():
        post = posterior_update(post, eset, policy, tr)
    return post


def batch_posterior(eset: EmbodimentSet, policy: TabularPolicy, traj: Trajectory) -> ExactPosterior:
    """Posterior by normalizing ``log p(e) + log p_e(traj)`` in one shot."""
    with np.errstate(divide="ignore"):
        log_joint = np.log(eset.prior) + np.array([trajectory_logprob(e, policy, traj) for e in eset])
    return ExactPosterior(_normalize_log(log_joint), eset.prior)


@dataclass(frozen=True, eq=False)
class HistoryWindow:
    """The last ``L`` (state, action) pairs before ``current_state``.

    Slots before the episode start hold the padding token
    ``(num_states, num_actions)``.
    """

    pairs: np.ndarray
    current_state: int

    @classmethod
    def from_trajectory(cls, traj: Trajectory, t: int, length: int, num_states: int, num_actions: int):
        """Window ending at ``states[t]``."""
        pairs = np.empty((length, 2), dtype=np.int64)
        pairs[:, 0], pairs[:, 1] = num_states, num_actions
        start = max(0, t - length)
        n = t - start
        if n:
            pairs[length - n:, 0] = traj.states[start:t]
            pairs[length - n:, 1] = traj.actions[start:t]
        return cls(pairs, int(traj.states[t]))

    @classmethod
    def padding(cls, length: int, num_states: int, num_actions: int, current_state: int):
        pairs = np.empty((length, 2), dtype=np.int64)
        pairs[:, 0], pairs[:, 1] = num_states, num_actions
        return cls(pairs, current_state)


def transition_ids(states: np.ndarray, actions: np.ndarray, num_states: int, num_actions: int) -> np.ndarray:
    """Flat index of each transition ``(s_t, a_t, s_{t+1})``."""
    return (states[:-1] * num_actions + actions) * num_states + states[1:]


def trajectory_windows(traj: Trajectory, length: int, num_states: int, num_actions: int) -> np.ndarray:
    """Encoded windows ending at every state of ``traj``, shape (T+1, L).

    Row ``t`` lists the transition ids inside the window that ends at
    ``states[t]``; empty slots hold -1.
    """
    ids = transition_ids(traj.states, traj.actions, num_states, num_actions)
    out = np.full((traj.length + 1, length), -1, dtype=np.int64)
    for t in range(1, traj.length + 1):
        chunk = ids[max(0, t - length):t]
        out[t, length - chunk.size:] = chunk
    return out


class LearnedDiscriminator:
    """Softmax classifier ``q(e | window)`` trained by plain gradient descent
    on cross-entropy with an l2 penalty on the transition weights."""

    def __init__(
        self,
        num_states: int,
        num_actions: int,
        class_ids: Sequence[int],
        history: int = DEFAULT_HISTORY,
        step_size: float = 0.5,
        l2: float = 1e-4,
    ):
        self.num_states = num_states
        self.num_actions = num_actions
        self.class_ids = list(class_ids)
        self.history = history
        self.step_size = step_size
        self.l2 = l2
        self.num_features = num_states * num_actions * num_states
        # the trailing column absorbs padding and stays zero
        self.weights = np.zeros((len(self.class_ids), self.num_features + 1))
        self.bias = np.zeros(len(self.class_ids))

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)

    def label(self, embodiment_id: int) -> int:
        return self.class_ids.index(embodiment_id)

    def encode(self, window: HistoryWindow) -> np.ndarray:
        pairs = window.pairs
        if pairs.shape[0] != self.history:
            raise ModelError(f"window length {pairs.shape[0]} != discriminator history {self.history}")
        states = np.append(pairs[:, 0], window.current_state)
        real = pairs[:, 0] < self.num_states
        ids = np.full(self.history, -1, dtype=np.int64)
        nxt = states[1:]
        valid = real & (nxt < self.num_states)
        ids[valid] = ((pairs[valid, 0] * self.num_actions + pairs[valid, 1]) * self.num_states + nxt[valid])
        return ids

    def logits(self, encoded: np.ndarray) -> np.ndarray:
        encoded = np.atleast_2d(encoded)
        cols = np.where(encoded < 0, self.num_features, encoded)
        return self.bias + self.weights[:, cols].sum(axis=2).T / self.history

    def log_probs(self, encoded: np.ndarray) -> np.ndarray:
        z = self.logits(encoded)
        z = z - z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def classify(self, window: HistoryWindow) -> np.ndarray:
        return self.log_probs(self.encode(window))[0]

    def objective(self, encoded: np.ndarray, labels: np.ndarray) -> float:
        """Mean cross-entropy plus ``l2/2 * ||W||^2``."""
        lp = self.log_probs(encoded)
        ce = -float(np.mean(lp[np.arange(len(labels)), labels]))
        return ce + 0.5 * self.l2 * float(np.sum(self.weights**2))

    def gradient(self, encoded: np.ndarray, labels: np.ndarray):
        encoded = np.atleast_2d(encoded)
        lp = self.log_probs(encoded)
        n = len(labels)
        dz = np.exp(lp)
        dz[np.arange(n), labels] -= 1.0
        dz /= n
        cols = np.where(encoded < 0, self.num_features, encoded)
        grad_w = np.zeros_like(self.weights)
        for slot in range(cols.shape[1]):
            np.add.at(grad_w.T, cols[:, slot], dz)
        grad_w /= self.history
        grad_w[:, self.num_features] = 0.0
        grad_w += self.l2 * self.weights
        return grad_w, dz.sum(axis=0), lp

    def train_encoded(self, encoded: np.ndarray, labels: np.ndarray) -> float:
        """One gradient step; returns the pre-step mean cross-entropy."""
        grad_w, grad_b, lp = self.gradient(encoded, labels)
        loss = -float(np.mean(lp[np.arange(len(labels)), labels]))
        self.weights -= self.step_size * grad_w
        self.bias -= self.step_size * grad_b
        return loss

    def state_dict(self) -> dict:
        return {"weights": self.weights.copy(), "bias": self.bias.copy()}

    def load_state_dict(self, state: dict) -> None:
        self.weights = np.array(state["weights"], dtype=float)
        self.bias = np.array(state["bias"], dtype=float)


def train_discriminator(disc: LearnedDiscriminator, batch) -> float:
    """One gradient step on ``(HistoryWindow, embodiment_id)`` pairs."""
    if not batch:
        raise ModelError("train_discriminator needs a nonempty batch")
    encoded = np.array([disc.encode(w) for w, _ in batch])
    labels = np.array([disc.label(e) for _, e in batch])
    return disc.train_encoded(encoded, labels)


def classify(disc: LearnedDiscriminator, window: HistoryWindow) -> np.ndarray:
    return disc.classify(window)


def embodiment_context(source, window: HistoryWindow | None = None) -> np.ndarray:
    """Posterior probability vector used as the embodiment context."""
    if isinstance(source, ExactPosterior):
        return source.probs
    if window is None:
        raise ModelError("a learned discriminator needs a window to produce a context")
    return np.exp(source.classify(window))


def context_bucket(context: np.ndarray, threshold: float = UNCERTAIN_THRESHOLD) -> int:
    """Argmax embodiment, or ``len(context)`` when no entry reaches ``threshold``."""
    best = int(np.argmax(context))
    return best if context[best] >= threshold else len(context)
