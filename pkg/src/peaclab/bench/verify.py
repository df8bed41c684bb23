"""Oracle and geometry suites behind the ``verify*`` subcommands.

Each suite returns ``(passed, records)``; records are JSON-ready dicts
written one per line, with no timing inside so reruns are byte-identical.
"""

from __future__ import annotations

import json

import numpy as np

from ..envs import appendix_a1
from ..geometry import reproduce_appendix_counterexample, verify_single_embodiment_convexity
from ..mdp import EmbodimentSet, TabularPolicy, as_generator
from ..oracle import (
    g_property_probes,
    inner_max_closed_form,
    maximize_inner_projected_gradient,
    random_instance,
    verify_mi_identity,
    verify_skill_decomposition,
    verify_theorem_1,
)
from ..trajspace import enumerate_space

APPENDIX_GAMMAS = (0.5, 0.9, 0.99)
THEOREM_BETAS = (0.1, 1.0, 10.0)


def _clean(obj):
    return json.loads(json.dumps(obj, default=lambda x: x.item() if isinstance(x, np.generic) else str(x)))


def geometry_suite(seed: int = 0, gammas=APPENDIX_GAMMAS, convexity_samples: int = 100):
    records = []
    for g in gammas:
        rep = reproduce_appendix_counterexample(g)
        records.append({"check": "appendix", "gamma": g, "distance": rep["distance"],
                        "expected_distance": rep["closed_form"]["hull_distance"],
                        "max_error": rep["max_error"], "inside": rep["inside"], "passed": rep["passed"]})
    eset = appendix_a1()
    for e in eset:
        rep = verify_single_embodiment_convexity(e, 2, convexity_samples, seed=seed, gamma=0.9)
        records.append({"check": "single-embodiment-convexity", "embodiment": e.id,
                        "max_distance": rep["max_distance"], "violations": len(rep["violations"]),
                        "passed": rep["passed"]})
    rng = as_generator(seed)
    for i in range(5):
        es, _ = random_instance(rng, max_states=3, max_actions=3, min_embodiments=1, max_embodiments=1)
        rep = verify_single_embodiment_convexity(es.embodiments[0], es.unified_num_actions, 20, seed=seed + i)
        records.append({"check": "single-embodiment-convexity", "instance": i, "max_distance": rep["max_distance"],
                        "violations": len(rep["violations"]), "passed": rep["passed"]})
    return all(r["passed"] for r in records), _clean(records)


def theorem_suite(seed: int = 0, instances: int = 50, horizon: int = 3, betas=THEOREM_BETAS,
                  mi_instances: int = 50, inner_instances: int = 20):
    records = []
    for rep in verify_theorem_1(beta=betas, instances=instances, seed=seed, horizon=horizon):
        records.append({"check": "theorem", "instance": rep.instance, "beta": rep.beta,
                        "max_gap": max(rep.embodiment_gaps), "kl": rep.kl, "converged": rep.converged,
                        "passed": rep.passed})
    rng = as_generator(seed + 1)
    for i in range(mi_instances):
        es, pi = random_instance(rng)
        rep = verify_mi_identity(es, pi, horizon)
        records.append({"check": "mi-identity", "instance": i, **rep})
    rng = as_generator(seed + 2)
    for i in range(inner_instances):
        es, pi = random_instance(rng)
        space = enumerate_space(es, pi, 2)
        for beta in betas:
            reward = rng.normal(size=space.size) * 2.0
            closed, _ = inner_max_closed_form(space, reward, beta, es.ids[0])
            numeric, _ = maximize_inner_projected_gradient(space, reward, beta, es.ids[0])
            records.append({"check": "inner-closed-form", "instance": i, "beta": beta,
                            "gap": abs(closed - numeric), "passed": abs(closed - numeric) < 1e-5})
        rep = g_property_probes(space, es.ids[0], probes=1000 // inner_instances, seed=seed + i,
                                beta=betas[i % len(betas)])
        records.append({"check": "g-properties", "instance": i, **rep})
    return all(r["passed"] for r in records), _clean(records)


def random_skill_instance(rng, num_skills: int = 2, dirac: bool = False):
    """Random embodiment set with a skill-conditioned policy; ``dirac``
    puts all prior mass on one embodiment."""
    rng = as_generator(rng)
    es, _ = random_instance(rng, max_states=3, max_actions=2)
    if dirac:
        prior = np.zeros(len(es))
        prior[0] = 1.0
        es = EmbodimentSet(es.embodiments, prior, es.unified_num_actions, es.discount)
    probs = rng.dirichlet(np.ones(es.unified_num_actions), size=(num_skills, es.num_states))
    skill_prior = rng.dirichlet(np.ones(num_skills))
    return es, TabularPolicy(probs, "skill"), skill_prior


def skills_suite(seed: int = 0, instances: int = 30, horizon: int = 3):
    records = []
    rng = as_generator(seed)
    for i in range(instances):
        es, pi, zp = random_skill_instance(rng, int(rng.integers(2, 4)), dirac=(i % 5 == 4))
        rep = verify_skill_decomposition(es, pi, zp, horizon)
        rec = {"check": "skill-decomposition", "instance": i, "dirac": bool(i % 5 == 4), **rep}
        if rec["dirac"]:
            rec["passed"] = rec["passed"] and abs(rep["embodiment_term"]) < 1e-12
        records.append(rec)
    return all(r["passed"] for r in records), _clean(records)


SUITES = {"geometry": geometry_suite, "theorem": theorem_suite, "skills": skills_suite}


def write_records(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
