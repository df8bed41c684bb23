"""Occupancy-measure geometry: deterministic-policy vertices, convex-hull
membership, and the two-embodiment construction whose mixture occupancies
escape the hull of deterministic ones."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import envs
from .mdp import (
    Embodiment,
    EmbodimentSet,
    ModelError,
    OccupancyMeasure,
    TabularPolicy,
    as_generator,
    mixture_occupancy,
    occupancy,
)

MAX_DETERMINISTIC_POLICIES = 4096
HULL_TOL = 1e-8


class EnumerationTooLarge(ModelError):
    pass


@dataclass
class PolicyEnumeration:
    policies: list
    occupancies: list

    def points(self) -> np.ndarray:
        return np.array([o.dist for o in self.occupancies])


@dataclass
class HullQueryResult:
    inside: bool
    distance: float
    witness_weights: np.ndarray
    nearest: np.ndarray = field(repr=False, default=None)


def enumerate_deterministic_occupancies(
    eset: EmbodimentSet,
    per_embodiment: bool = False,
    embodiment_id: int | None = None,
    gamma: float | None = None,
) -> PolicyEnumeration:
    """Occupancy of every deterministic state-only policy.

    With ``per_embodiment`` the occupancies are taken under one embodiment
    (the first one unless ``embodiment_id`` is given); otherwise under the
    prior-weighted mixture.
    """
    n_s, n_a = eset.num_states, eset.unified_num_actions
    if n_a**n_s > MAX_DETERMINISTIC_POLICIES:
        raise EnumerationTooLarge(
            f"{n_a}^{n_s} deterministic policies exceeds the guard of {MAX_DETERMINISTIC_POLICIES}"
        )
    gamma = eset.discount if gamma is None else gamma
    emb = eset.embodiment(eset.ids[0] if embodiment_id is None else embodiment_id)
    policies, occs = [], []
    for actions in itertools.product(range(n_a), repeat=n_s):
        pi = TabularPolicy.deterministic(actions, n_a)
        policies.append(pi)
        occs.append(occupancy(emb, pi, gamma) if per_embodiment else mixture_occupancy(eset, pi, gamma))
    return PolicyEnumeration(policies, occs)


def _as_array(x) -> np.ndarray:
    return np.asarray(x.dist if isinstance(x, OccupancyMeasure) else x, dtype=float)


def min_norm_point(points: np.ndarray, max_iter: int = 1000, eps: float = 1e-15):
    """Wolfe's algorithm: the minimum-norm point of ``conv(points)``.

    Returns ``(weights, point)`` with ``weights`` a convex combination over
    the rows of ``points``.
    """
    n = points.shape[0]
    scale = max(1.0, float(np.max(np.sum(points**2, axis=1))))
    first = int(np.argmin(np.sum(points**2, axis=1)))
    corral = [first]
    weights = np.array([1.0])
    for _ in range(max_iter):
        x = weights @ points[corral]
        j = int(np.argmin(points @ x))
        if x @ x - x @ points[j] <= eps * scale or j in corral:
            break
        corral.append(j)
        weights = np.append(weights, 0.0)
        while True:
            alpha = _affine_minimizer(points[corral])
            if np.all(alpha > eps):
                weights = alpha
                break
            mask = alpha <= eps
            ratios = weights[mask] / (weights[mask] - alpha[mask])
            theta = min(1.0, float(np.min(ratios)))
            weights = theta * alpha + (1.0 - theta) * weights
            keep = weights > eps
            corral = [c for c, k in zip(corral, keep) if k]
            weights = weights[keep]
            weights /= weights.sum()
    full = np.zeros(n)
    full[corral] = weights
    return full, full @ points


def _affine_minimizer(pts: np.ndarray) -> np.ndarray:
    """Minimum-norm point of the affine hull of ``pts`` as affine weights."""
    k = pts.shape[0]
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = pts @ pts.T
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    alpha = sol[:k]
    return alpha / alpha.sum()


def hull_membership(point, vertices: Sequence, tol: float = HULL_TOL) -> HullQueryResult:
    """Least-distance query of ``point`` against ``conv(vertices)``.

    Solves ``min ||sum_i w_i v_i - point||`` over the simplex; the point is
    inside iff that distance is at most ``tol``.
    """
    if len(vertices) == 0:
        raise ModelError("hull_membership needs at least one vertex")
    p = _as_array(point)
    verts = np.array([_as_array(v) for v in vertices])
    if verts.ndim != 2 or verts.shape[1] != p.size:
        raise ModelError("point and vertices must share one dimension")
    weights, shifted = min_norm_point(verts - p)
    distance = float(np.linalg.norm(shifted))
    return HullQueryResult(distance <= tol, distance, weights, shifted + p)


def random_stochastic_policy(rng, num_states: int, num_actions: int) -> TabularPolicy:
    return TabularPolicy(rng.dirichlet(np.ones(num_actions), size=num_states))


def verify_single_embodiment_convexity(
    emb: Embodiment,
    num_actions: int | None = None,
    num_random_policies: int = 100,
    seed=0,
    gamma: float = 0.9,
    tol: float = HULL_TOL,
) -> dict:
    """Check sampled stochastic-policy occupancies lie in the hull of the
    deterministic-policy occupancies of one embodiment."""
    n_a = emb.action_projector.size if num_actions is None else num_actions
    eset = EmbodimentSet((emb,), np.ones(1), n_a, gamma)
    vertices = enumerate_deterministic_occupancies(eset, per_embodiment=True).points()
    rng = as_generator(seed)
    worst, violations = 0.0, []
    for i in range(num_random_policies):
        pi = random_stochastic_policy(rng, emb.num_states, n_a)
        point = occupancy(emb, pi, gamma).dist
        res = hull_membership(point, vertices, tol)
        worst = max(worst, res.distance)
        if not res.inside:
            violations.append({"sample": i, "policy": pi.probs.tolist(), "point": point.tolist(),
                               "distance": res.distance})
    return {"embodiment": emb.id, "gamma": gamma, "samples": num_random_policies,
            "max_distance": worst, "violations": violations, "passed": not violations}


def appendix_closed_forms(gamma: float) -> dict:
    """Closed-form occupancies of the two-embodiment construction."""
    g = gamma
    return {
        "rho_1_pi1": (0.5, 0.5),
        "rho_1_pi2": ((1 + g) / 2, (1 - g) / 2),
        "rho_1_pi3": ((1 - g) / 2, (1 + g) / 2),
        "rho_1_pi4": (0.5, 0.5),
        "rho_2_pi1": (0.5, 0.5),
        "rho_2_pi2": ((1 - g) / 2, (1 + g) / 2),
        "rho_2_pi3": ((1 + g) / 2, (1 - g) / 2),
        "rho_2_pi4": (0.5, 0.5),
        "rho_1_pi": (1 / (2 - g), (1 - g) / (2 - g)),
        "rho_2_pi": (1 / (2 + g), (1 + g) / (2 + g)),
        "rho_pi": (2 / (4 - g * g), (2 - g * g) / (4 - g * g)),
        "hull_distance": math.sqrt(2.0) * abs(2 / (4 - g * g) - 0.5),
    }


# a1 in s1; uniform in s2
APPENDIX_STOCHASTIC_POLICY = np.array([[1.0, 0.0], [0.5, 0.5]])


def reproduce_appendix_counterexample(gamma: float = 0.9, tol: float = 1e-9) -> dict:
    """Numeric vs closed-form occupancies for the two-embodiment example and
    the hull query of the stochastic mixture point."""
    eset = envs.appendix_a1(gamma)
    e1, e2 = eset.embodiments
    closed = appendix_closed_forms(gamma)
    numeric = {}
    for k, actions in enumerate(itertools.product(range(2), repeat=2), start=1):
        pi = TabularPolicy.deterministic(actions, 2)
        numeric[f"rho_1_pi{k}"] = occupancy(e1, pi, gamma).dist
        numeric[f"rho_2_pi{k}"] = occupancy(e2, pi, gamma).dist
    pi = TabularPolicy(APPENDIX_STOCHASTIC_POLICY)
    numeric["rho_1_pi"] = occupancy(e1, pi, gamma).dist
    numeric["rho_2_pi"] = occupancy(e2, pi, gamma).dist
    numeric["rho_pi"] = mixture_occupancy(eset, pi, gamma).dist

    vertices = enumerate_deterministic_occupancies(eset, per_embodiment=False, gamma=gamma).points()
    hull = hull_membership(numeric["rho_pi"], vertices)
    numeric["hull_distance"] = hull.distance

    errors = {k: float(np.max(np.abs(np.asarray(numeric[k]) - np.asarray(v)))) for k, v in closed.items()}
    failures = [k for k, err in errors.items() if err > tol]
    if hull.inside:
        failures.append("mixture point inside deterministic hull")
    return {
        "gamma": gamma,
        "point": numeric["rho_pi"].tolist(),
        "distance": hull.distance,
        "inside": hull.inside,
        "closed_form": {k: list(v) if isinstance(v, tuple) else v for k, v in closed.items()},
        "numeric": {k: np.asarray(v).tolist() for k, v in numeric.items()},
        "max_error": max(errors.values()),
        "failures": failures,
        "passed": not failures,
    }


def to_jsonl(records, fh) -> None:
    """Write one JSON object per line."""
    for rec in records:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
