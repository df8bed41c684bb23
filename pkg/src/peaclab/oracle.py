"""Brute-force checks of the min-max pre-training objective on exhaustively
enumerated trajectory spaces.

Notation: ``p_e`` is one embodiment's trajectory distribution, ``p_bar`` the
prior mixture, ``beta`` the KL weight. For a trajectory reward ``R``

    g(R) = beta * log sum_tau p_bar(tau) exp(R(tau) / beta) - E_{p_e}[R]

is the value of the inner maximisation over fine-tuned trajectory
distributions, and its minimum over ``R`` should equal
``-beta * KL(p_e || p_bar)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .inference import exact_posterior_of_trajectory
from .mdp import Embodiment, EmbodimentSet, ModelError, TabularPolicy, Trajectory, as_generator
from .rewards import skill_objective_terms
from .trajspace import FiniteTrajectorySpace, enumerate_space, kl, skill_conditioned_probs

__all__ = [
    "g_property_probes",
    "FiniteTrajectorySpace",
    "OracleReport",
    "enumerate_space",
    "g_value",
    "inner_max_closed_form",
    "inner_objective",
    "maximize_inner_projected_gradient",
    "minimize_g",
    "measure_stepwise_gap",
    "random_instance",
    "verify_mi_identity",
    "verify_skill_decomposition",
    "verify_theorem_1",
]

THEOREM_TOL = 1e-4
MI_TOL = 1e-9
DECOMPOSITION_TOL = 1e-8


def _logsumexp(x: np.ndarray) -> float:
    top = np.max(x)
    return float(top + np.log(np.sum(np.exp(x - top))))


def _support(space: FiniteTrajectorySpace) -> np.ndarray:
    return space.mixture > 0


def g_value(space: FiniteTrajectorySpace, reward: np.ndarray, beta: float, embodiment_id: int) -> float:
    k = space.ids.index(embodiment_id)
    mask = _support(space)
    reward = np.asarray(reward, dtype=float)
    p_e = space.probs[k]
    lse = _logsumexp(np.log(space.mixture[mask]) + reward[mask] / beta)
    return beta * lse - float(p_e[mask] @ reward[mask])


def inner_max_closed_form(space: FiniteTrajectorySpace, reward, beta: float, embodiment_id: int):
    """Optimal value and maximiser of the inner problem over fine-tuned
    trajectory distributions: the Boltzmann tilt of ``p_bar`` by ``R/beta``."""
    if beta <= 0:
        raise ModelError("beta must be positive")
    reward = np.asarray(reward, dtype=float)
    mask = _support(space)
    logits = np.log(space.mixture[mask]) + reward[mask] / beta
    p_star = np.zeros(space.size)
    p_star[mask] = np.exp(logits - _logsumexp(logits))
    return g_value(space, reward, beta, embodiment_id), p_star


def inner_objective(space: FiniteTrajectorySpace, p: np.ndarray, reward, beta: float, embodiment_id: int) -> float:
    """Policy improvement minus the KL constraint for a candidate ``p``."""
    k = space.ids.index(embodiment_id)
    reward = np.asarray(reward, dtype=float)
    return float(p @ reward - space.probs[k] @ reward) - beta * kl(p, space.mixture)


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u * np.arange(1, v.size + 1) > css)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def maximize_inner_projected_gradient(
    space: FiniteTrajectorySpace, reward, beta: float, embodiment_id: int,
    max_iter: int = 10_000, tol: float = 1e-14,
):
    """Maximise the inner objective over the simplex by scaled projected
    gradient ascent with Armijo backtracking; independent of the closed form.

    The gradient is scaled by ``diag(p)`` and projected onto the simplex
    tangent space in that metric, which keeps iterates strictly positive
    and copes with the ``1/p`` curvature of the entropy term. A plain
    Euclidean projected gradient stalls for hours on the same instances.
    """
    if beta <= 0:
        raise ModelError("beta must be positive")
    reward = np.asarray(reward, dtype=float)
    # a -inf reward forces p = 0 there, so the search drops those entries
    mask = _support(space) & np.isfinite(reward)
    log_bar = np.log(space.mixture[mask])
    r = reward[mask]
    k = space.ids.index(embodiment_id)
    baseline = float(space.probs[k][mask] @ r)

    def f(p):
        return float(p @ r) - baseline - beta * float(p @ (np.log(p) - log_bar))

    p = np.exp(log_bar - _logsumexp(log_bar))
    value = f(p)
    step = 1.0 / beta
    for _ in range(max_iter):
        g = r - beta * (np.log(p) - log_bar + 1.0)
        d = p * (g - p @ g)
        slope = float(g @ d)
        if slope <= tol * max(1.0, abs(value)):
            break
        while True:
            cand = p + step * d
            if np.all(cand > 0):
                cand = cand / cand.sum()
                cand_value = f(cand)
                if cand_value >= value + 1e-4 * step * slope:
                    break
            step *= 0.5
            if step < 1e-30:
                break
        if step < 1e-30:
            break
        p, value = cand, cand_value
        step = min(2.0 * step, 1.0 / beta)
    full = np.zeros(space.size)
    full[mask] = p
    return value, full


def g_property_probes(space: FiniteTrajectorySpace, embodiment_id: int, probes: int = 1000, seed=0,
                      beta: float = 1.0, scale: float = 3.0, tol: float = 1e-9) -> dict:
    """Random probes of three properties of ``g``: convexity along random
    chords, invariance to constant shifts of ``R``, and the lower bound
    ``g(R) >= -beta KL(p_e || p_bar)``. Returns the worst violation of each."""
    rng = as_generator(seed)
    k = space.ids.index(embodiment_id)
    floor = -beta * kl(space.probs[k], space.mixture)
    worst = {"convexity": 0.0, "shift": 0.0, "lower_bound": 0.0}
    for _ in range(probes):
        r1 = rng.normal(size=space.size) * scale
        r2 = rng.normal(size=space.size) * scale
        lam = float(rng.random())
        c = float(rng.normal() * scale)
        g1, g2 = g_value(space, r1, beta, embodiment_id), g_value(space, r2, beta, embodiment_id)
        mid = g_value(space, lam * r1 + (1 - lam) * r2, beta, embodiment_id)
        worst["convexity"] = max(worst["convexity"], mid - (lam * g1 + (1 - lam) * g2))
        worst["shift"] = max(worst["shift"], abs(g_value(space, r1 + c, beta, embodiment_id) - g1))
        worst["lower_bound"] = max(worst["lower_bound"], floor - g1)
    worst["passed"] = all(v <= tol for v in worst.values())
    worst["probes"] = int(probes)
    return worst


@dataclass
class MinimizeResult:
    value: float
    reward: np.ndarray
    gradient_norm: float
    iterations: int
    converged: bool


def minimize_g(space: FiniteTrajectorySpace, beta: float, embodiment_id: int, method: str = "newton",
               max_iter: int = 5000, grad_tol: float = 1e-10) -> MinimizeResult:
    """Numerically minimise ``g`` over trajectory rewards, starting from R = 0.

    ``g`` is increasing in ``R(tau)`` wherever ``p_e(tau) = 0``, so its
    infimum sends those rewards to ``-inf``; the search runs over the rest.
    ``method="newton"`` uses damped Newton steps with the exact
    diagonal-plus-rank-one Hessian; ``method="gd"`` is plain gradient descent
    with step 0.5 in ``R / beta`` coordinates.
    """
    k = space.ids.index(embodiment_id)
    p_e_all = space.probs[k]
    active = p_e_all > 0
    log_pbar = np.log(space.mixture[active])
    p_e = p_e_all[active]
    u = np.zeros(p_e.size)

    def h(x):
        return _logsumexp(log_pbar + x) - float(p_e @ x)

    def tilt(x):
        z = log_pbar + x
        return np.exp(z - _logsumexp(z))

    value = h(u)
    it = 0
    for it in range(1, max_iter + 1):
        t = tilt(u)
        g = t - p_e
        if np.max(np.abs(g)) < grad_tol:
            break
        if method == "gd":
            u = u - 0.5 * g
            value = h(u)
            continue
        direction = p_e / t - 1.0
        slope = float(g @ direction)
        step = 1.0
        while True:
            cand = u + step * direction
            cand_value = h(cand)
            if cand_value <= value + 1e-4 * step * slope or step < 1e-12:
                break
            step *= 0.5
        u, value = cand, cand_value
    gnorm = float(np.max(np.abs(tilt(u) - p_e)))
    reward = np.full(space.size, -math.inf)
    reward[active] = beta * u
    return MinimizeResult(beta * value, reward, gnorm, it, gnorm < max(grad_tol, 1e-7))


@dataclass
class OracleReport:
    beta: float
    closed_form_value: float
    numeric_minimax_value: float
    gap: float
    kl: list
    closed_form: list
    numeric: list
    embodiment_gaps: list
    stationarity_error: list
    argmin_reward: list = field(repr=False, default_factory=list)
    argmax_distribution: list = field(repr=False, default_factory=list)
    converged: bool = True
    instance: int | None = None
    passed: bool = True

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=_json_default)


def _json_default(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(type(x))


def _finite_or_none(values):
    return [float(v) if math.isfinite(v) else None for v in values]


def theorem_report(space: FiniteTrajectorySpace, beta: float, tol: float = THEOREM_TOL,
                   method: str = "newton") -> OracleReport:
    """Numeric min over R of the inner optimum vs ``-beta KL(p_e || p_bar)``
    for every embodiment of an enumerated space."""
    kls, closed, numeric, gaps, stat, rewards, dists = [], [], [], [], [], [], []
    converged = True
    for k, eid in enumerate(space.ids):
        kl_e = kl(space.probs[k], space.mixture)
        res = minimize_g(space, beta, eid, method=method)
        # the inner maximum at the numeric argmin, found by search rather
        # than by the closed form
        inner_value, p_star = maximize_inner_projected_gradient(space, res.reward, beta, eid)
        # stationarity of r*: the best response to r* reproduces p_e
        stat.append(float(np.max(np.abs(p_star - space.probs[k]))))
        kls.append(kl_e)
        closed.append(-beta * kl_e)
        numeric.append(inner_value)
        gaps.append(max(abs(inner_value + beta * kl_e), abs(res.value + beta * kl_e)))
        rewards.append(_finite_or_none(res.reward))
        dists.append(p_star.tolist())
        converged &= res.converged
    prior = np.asarray(space.prior)
    closed_value = float(prior @ closed)
    numeric_value = float(prior @ numeric)
    passed = converged and max(gaps) < tol
    return OracleReport(beta, closed_value, numeric_value, abs(closed_value - numeric_value), kls, closed,
                        numeric, gaps, stat, rewards, dists, converged, None, passed)


def random_instance(rng, max_states: int = 3, max_actions: int = 2, max_embodiments: int = 3,
                    min_embodiments: int = 2, discount: float = 0.9, sparsity: float = 0.0):
    """Random CE-MDP with Dirichlet dynamics and a random state-only policy.

    ``sparsity`` zeroes that fraction of transition entries (keeping each
    row nonempty) to exercise zero-probability trajectories.
    """
    rng = as_generator(rng)
    n_s = int(rng.integers(2, max_states + 1))
    n_a = int(rng.integers(1, max_actions + 1))
    n_e = int(rng.integers(min_embodiments, max_embodiments + 1))
    embodiments = []
    for eid in range(n_e):
        kernel = rng.dirichlet(np.ones(n_s), size=(n_s, n_a))
        if sparsity > 0:
            drop = rng.random(kernel.shape) < sparsity
            keep = np.argmax(kernel, axis=2)
            drop[np.arange(n_s)[:, None], np.arange(n_a)[None, :], keep] = False
            kernel = np.where(drop, 0.0, kernel)
            kernel /= kernel.sum(axis=2, keepdims=True)
        mu0 = rng.dirichlet(np.ones(n_s))
        projector = rng.permutation(n_a)
        embodiments.append(Embodiment(eid, kernel, mu0, projector))
    prior = rng.dirichlet(np.ones(n_e))
    eset = EmbodimentSet(tuple(embodiments), prior, n_a, discount)
    policy = TabularPolicy(rng.dirichlet(np.ones(n_a), size=n_s))
    return eset, policy


def verify_theorem_1(eset: EmbodimentSet | None = None, policy: TabularPolicy | None = None,
                     horizon: int = 3, beta=1.0, instances: int = 50, seed=0,
                     tol: float = THEOREM_TOL, method: str = "newton") -> list:
    """Min-max value check (numeric min over R of the inner max versus
    ``-beta KL(p_e || p_bar)``) on one given instance, or on ``instances``
    random ones.

    ``beta`` may be a number or a sequence of values; one report is returned
    per (instance, beta).
    """
    betas = [beta] if np.isscalar(beta) else list(beta)
    if eset is not None:
        cases = [(None, eset, policy)]
    else:
        rng = as_generator(seed)
        cases = [(i, *random_instance(rng)) for i in range(instances)]
    reports = []
    for idx, es, pi in cases:
        space = enumerate_space(es, pi, horizon)
        for b in betas:
            rep = theorem_report(space, float(b), tol, method)
            rep.instance = idx
            reports.append(rep)
    return reports


def verify_mi_identity(eset: EmbodimentSet, policy: TabularPolicy, horizon: int = 3, tol: float = MI_TOL) -> dict:
    """Mutual information between embodiment and trajectory three ways: KL
    to the mixture, posterior-to-prior log ratio, and entropy difference."""
    space = enumerate_space(eset, policy, horizon)
    probs, mix, prior = space.probs, space.mixture, eset.prior
    kl_form = float(sum(prior[k] * kl(probs[k], mix) for k in range(len(eset))))

    log_prior = np.log(prior)
    posterior_form = 0.0
    for i in np.nonzero(mix > 0)[0]:
        traj = Trajectory(-1, space.states[i], space.actions[i])
        log_post = exact_posterior_of_trajectory(eset, policy, traj).log_weights
        for k in range(len(eset)):
            if probs[k, i] > 0:
                posterior_form += prior[k] * probs[k, i] * (log_post[k] - log_prior[k])

    def entropy(p):
        p = p[p > 0]
        return -float(np.sum(p * np.log(p)))

    mi_form = entropy(mix) - float(sum(prior[k] * entropy(probs[k]) for k in range(len(eset))))
    values = [kl_form, posterior_form, mi_form]
    spread = max(values) - min(values)
    return {"kl_form": kl_form, "posterior_form": posterior_form, "mi_form": mi_form,
            "max_disagreement": spread, "passed": spread < tol}


def verify_skill_decomposition(eset: EmbodimentSet, policy: TabularPolicy, skill_prior, horizon: int = 3,
                               tol: float = DECOMPOSITION_TOL) -> dict:
    """Skill-conditioned KL to the embodiment mixture versus its two-term
    split into embodiment information and skill information."""
    skill_prior = np.asarray(skill_prior, dtype=float)
    p_tze, _ = skill_conditioned_probs(eset, policy, horizon)
    p_bar = eset.prior @ np.einsum("z,ezt->et", skill_prior, p_tze)
    lhs = 0.0
    for k in range(len(eset)):
        for z in range(skill_prior.size):
            if skill_prior[z] > 0:
                lhs += eset.prior[k] * skill_prior[z] * kl(p_tze[k, z], p_bar)
    first, second = skill_objective_terms(eset, policy, skill_prior, horizon)
    gap = abs(lhs - (first + second))
    return {"lhs": lhs, "embodiment_term": first, "skill_term": second, "rhs": first + second,
            "gap": gap, "passed": gap < tol}


def measure_stepwise_gap(eset: EmbodimentSet, policy: TabularPolicy, horizon: int = 3) -> dict:
    """Expected summed per-step cross-embodiment reward (exact prefix
    posteriors) against the trajectory-level reward. Diagnostic only."""
    space = enumerate_space(eset, policy, horizon)
    n_e = len(eset)
    log_prior = np.log(eset.prior)
    states, actions = space.states, space.actions
    with np.errstate(divide="ignore", invalid="ignore"):
        prefix = np.array([np.log(e.initial_dist)[states[:, 0]] for e in eset])
        step_rewards = np.zeros((n_e, space.size, horizon))
        for t in range(horizon):
            prefix = prefix + np.array(
                [np.log(e.unified_transition)[states[:, t], actions[:, t], states[:, t + 1]] for e in eset])
            joint = log_prior[:, None] + prefix
            top = joint.max(axis=0)
            # impossible prefixes carry zero weight below; keep them finite
            top = np.where(np.isfinite(top), top, 0.0)
            log_post = joint - (top + np.log(np.exp(joint - top).sum(axis=0)))
            step_rewards[:, :, t] = np.where(np.isfinite(log_post), log_prior[:, None] - log_post, 0.0)
    probs = space.probs
    weights = eset.prior[:, None] * probs
    ok = probs > 0
    stepwise = float(np.sum(np.where(ok, weights * step_rewards.sum(axis=2), 0.0)))
    trajectory = float(np.sum(np.where(ok, weights * step_rewards[:, :, -1], 0.0)))
    return {"stepwise": stepwise, "trajectory": trajectory, "gap": abs(stepwise - trajectory),
            "per_step": [float(np.sum(np.where(ok, weights * step_rewards[:, :, t], 0.0)))
                         for t in range(horizon)]}
