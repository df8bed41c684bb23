import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from peaclab.envs import appendix_a1
from peaclab.mdp import (
    IMPOSSIBLE,
    Embodiment,
    EmbodimentSet,
    ModelError,
    RewardTable,
    TabularPolicy,
    Trajectory,
    expected_return,
    mixture_occupancy,
    mixture_trajectory_logprob,
    occupancy,
    rollout,
    trajectory_logprob,
    truncated_return,
)
from peaclab.oracle import random_instance

seeds = st.integers(0, 2**31 - 1)


def power_series_occupancy(emb, probs, gamma, terms=4000):
    """Independent path: (1 - gamma) sum_t gamma^t P(s_t = s)."""
    p_pi = emb.state_transition(probs)
    marginal, total, w = emb.initial_dist.copy(), np.zeros(emb.num_states), 1.0
    for _ in range(terms):
        total += w * marginal
        marginal = marginal @ p_pi
        w *= gamma
    return (1 - gamma) * total


def chain(n=3):
    """Deterministic chain 0 -> 1 -> ... -> n-1 (absorbing), one action."""
    p = np.zeros((n, 1, n))
    for s in range(n):
        p[s, 0, min(s + 1, n - 1)] = 1.0
    mu0 = np.zeros(n)
    mu0[0] = 1.0
    return Embodiment(0, p, mu0, np.array([0]))


# ---------------------------------------------------------------- validation

def test_transition_rows_must_be_distributions():
    p = np.array([[[0.5, 0.4]], [[0.0, 1.0]]])
    with pytest.raises(ModelError):
        Embodiment(0, p, np.array([1.0, 0.0]), np.array([0]))
    with pytest.raises(ModelError):
        Embodiment(0, -np.ones((1, 1, 1)), np.array([1.0]), np.array([0]))


def test_initial_dist_and_projector_validated():
    p = np.ones((1, 1, 1))
    with pytest.raises(ModelError):
        Embodiment(0, p, np.array([0.5]), np.array([0]))
    with pytest.raises(ModelError):
        Embodiment(0, p, np.array([1.0]), np.array([1]))


def test_embodiment_set_invariants():
    e = chain()
    with pytest.raises(ModelError):
        EmbodimentSet((e, e), np.array([0.5, 0.5]), 1)
    with pytest.raises(ModelError):
        EmbodimentSet((e,), np.array([0.9]), 1)
    for g in (0.0, 1.0, 1.5):
        with pytest.raises(ModelError):
            EmbodimentSet((e,), np.array([1.0]), 1, g)


def test_policy_rows_validated():
    with pytest.raises(ModelError):
        TabularPolicy(np.array([[0.6, 0.6]]))
    with pytest.raises(ModelError):
        TabularPolicy(np.array([[1.5, -0.5]]))


def test_trajectory_shape_invariant():
    with pytest.raises(ModelError):
        Trajectory(0, np.array([0, 1]), np.array([0, 0]))
    assert Trajectory(0, np.array([0, 1, 1]), np.array([0, 0])).length == 2


# ---------------------------------------------------------------- occupancy

def test_single_state_occupancy():
    e = Embodiment(0, np.ones((1, 2, 1)), np.array([1.0]), np.array([0, 1]))
    d = occupancy(e, TabularPolicy(np.array([[0.3, 0.7]])), 0.9)
    assert d.dist.tolist() == [1.0]


@pytest.mark.parametrize("gamma", [0.5, 0.9, 0.99])
def test_two_state_occupancies(gamma):
    eset = appendix_a1(gamma)
    e1 = eset.embodiments[0]
    pi2 = TabularPolicy.deterministic([0, 1], 2)
    d = occupancy(e1, pi2, gamma).dist
    assert np.allclose(d, [(1 + gamma) / 2, (1 - gamma) / 2], atol=1e-12)
    pi = TabularPolicy(np.array([[1.0, 0.0], [0.5, 0.5]]))
    mix = mixture_occupancy(eset, pi, gamma).dist
    g2 = gamma * gamma
    assert np.allclose(mix, [2 / (4 - g2), (2 - g2) / (4 - g2)], atol=1e-12)
    for actions in itertools.product(range(2), repeat=2):
        d = mixture_occupancy(eset, TabularPolicy.deterministic(actions, 2), gamma).dist
        assert np.allclose(d, [0.5, 0.5], atol=1e-12)


def test_two_state_numeric_values_at_0_9():
    eset = appendix_a1(0.9)
    d = occupancy(eset.embodiments[0], TabularPolicy.deterministic([0, 1], 2), 0.9).dist
    assert np.allclose(d, [0.95, 0.05], atol=1e-12)
    mix = mixture_occupancy(eset, TabularPolicy(np.array([[1.0, 0.0], [0.5, 0.5]])), 0.9).dist
    assert mix[0] == pytest.approx(0.626959247648903, abs=1e-12)
    assert mix[1] == pytest.approx(0.373040752351097, abs=1e-12)


def test_occupancy_rejects_gamma_one():
    e = chain()
    with pytest.raises(ModelError):
        occupancy(e, TabularPolicy.uniform(3, 1), 1.0)


@settings(max_examples=60, deadline=None)
@given(seeds, st.floats(0.05, 0.95))
def test_occupancy_matches_power_series(seed, gamma):
    eset, pi = random_instance(seed, max_states=6, max_actions=3, max_embodiments=2, min_embodiments=1)
    for e in eset:
        d = occupancy(e, pi, gamma).dist
        assert abs(d.sum() - 1.0) < 1e-10
        assert d.min() >= -1e-12
        assert np.max(np.abs(d - power_series_occupancy(e, pi.probs, gamma))) < 1e-9
        # the defining flow equation
        rhs = (1 - gamma) * e.initial_dist + gamma * e.state_transition(pi.probs).T @ d
        assert np.max(np.abs(d - rhs)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_mixture_linearity(seed):
    eset, pi = random_instance(seed, max_states=5, max_actions=3)
    mix = mixture_occupancy(eset, pi).dist
    by_hand = sum(w * occupancy(e, pi, eset.discount).dist for w, e in zip(eset.prior, eset))
    assert np.max(np.abs(mix - by_hand)) <= 1e-12


def test_dirac_mixture_equals_occupancy():
    eset, pi = random_instance(3, min_embodiments=1, max_embodiments=1)
    assert np.array_equal(mixture_occupancy(eset, pi).dist, occupancy(eset.embodiments[0], pi, eset.discount).dist)


# ---------------------------------------------------------------- log-probs

def test_deterministic_chain_logprob_zero():
    e = chain()
    traj = Trajectory(0, np.array([0, 1, 2, 2]), np.array([0, 0, 0]))
    assert trajectory_logprob(e, TabularPolicy.uniform(3, 1), traj) == 0.0


def test_impossible_transition_sentinel():
    e = chain()
    traj = Trajectory(0, np.array([0, 2]), np.array([0]))
    assert trajectory_logprob(e, TabularPolicy.uniform(3, 1), traj) == IMPOSSIBLE


def test_empty_trajectory_is_initial_logprob():
    eset, pi = random_instance(11)
    e = eset.embodiments[0]
    traj = Trajectory(0, np.array([1]), np.array([], dtype=int))
    assert trajectory_logprob(e, pi, traj) == pytest.approx(math.log(e.initial_dist[1]))


def test_two_state_trajectory_logprobs():
    eset = appendix_a1(0.9)
    traj = Trajectory(0, np.array([0, 0]), np.array([0]))
    pi2 = TabularPolicy.deterministic([0, 1], 2)
    assert trajectory_logprob(eset.embodiments[0], pi2, traj) == pytest.approx(math.log(0.5), abs=1e-15)
    assert trajectory_logprob(eset.embodiments[1], pi2, traj) == IMPOSSIBLE
    assert mixture_trajectory_logprob(eset, pi2, traj) == pytest.approx(math.log(0.25), abs=1e-15)


def test_mixture_logprob_single_and_identical():
    eset, pi = random_instance(5, min_embodiments=1, max_embodiments=1)
    traj = rollout(eset, pi, 0, 4, seed=1)
    assert mixture_trajectory_logprob(eset, pi, traj) == pytest.approx(trajectory_logprob(eset.embodiments[0], pi, traj))
    e = eset.embodiments[0]
    twin = Embodiment(1, e.transition, e.initial_dist, e.action_projector)
    pair = EmbodimentSet((e, twin), np.array([0.3, 0.7]), eset.unified_num_actions)
    assert mixture_trajectory_logprob(pair, pi, traj) == pytest.approx(trajectory_logprob(e, pi, traj), abs=1e-12)


def test_all_impossible_mixture():
    eset = appendix_a1(0.9)
    traj = Trajectory(0, np.array([0, 0]), np.array([0]))
    never = TabularPolicy.deterministic([1, 1], 2)
    assert mixture_trajectory_logprob(eset, never, traj) == IMPOSSIBLE


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(0, 4))
def test_logprobs_exponentiate_to_one(seed, length):
    eset, pi = random_instance(seed, max_states=3, max_actions=3, min_embodiments=1, max_embodiments=1)
    e = eset.embodiments[0]
    n_s, n_a = e.num_states, eset.unified_num_actions
    total = 0.0
    for ss in itertools.product(range(n_s), repeat=length + 1):
        for aa in itertools.product(range(n_a), repeat=length):
            lp = trajectory_logprob(e, pi, Trajectory(0, np.array(ss), np.array(aa, dtype=int)))
            total += math.exp(lp)
    assert abs(total - 1.0) < 1e-9


# ---------------------------------------------------------------- returns

def test_expected_return_examples():
    eset = appendix_a1(0.9)
    e1 = eset.embodiments[0]
    pi2 = TabularPolicy.deterministic([0, 1], 2)
    assert expected_return(e1, pi2, RewardTable(np.zeros(2)), 0.9) == 0.0
    assert expected_return(e1, pi2, RewardTable(np.full(2, 3.0)), 0.9) == pytest.approx(30.0, abs=1e-10)
    assert expected_return(e1, pi2, RewardTable(np.array([1.0, 0.0])), 0.9) == pytest.approx(9.5, abs=1e-10)


def test_nonfinite_reward_rejected():
    with pytest.raises(ModelError):
        RewardTable(np.array([0.0, np.inf]))


def exhaustive_truncated_return(e, probs, reward, gamma, horizon):
    """Independent path: sum over every state path of length ``horizon``."""
    p_pi = e.state_transition(probs)
    total = 0.0
    for path in itertools.product(range(e.num_states), repeat=horizon):
        p = e.initial_dist[path[0]]
        for a, b in zip(path, path[1:]):
            p *= p_pi[a, b]
        total += p * sum(gamma**t * reward[s] for t, s in enumerate(path))
    return total


def test_return_identity_on_random_mdps():
    rng = np.random.default_rng(0)
    T = 200
    for _ in range(100):
        eset, pi = random_instance(rng, max_states=6, max_actions=3, min_embodiments=1, max_embodiments=1)
        e = eset.embodiments[0]
        reward = rng.normal(size=e.num_states)
        gamma = float(rng.uniform(0.5, 0.95))
        bound = gamma**T * np.abs(reward).max() / (1 - gamma)
        exact = expected_return(e, pi, RewardTable(reward), gamma)
        assert abs(exact - truncated_return(e, pi, RewardTable(reward), gamma, T)) <= bound + 1e-12


def test_truncated_return_matches_path_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(10):
        eset, pi = random_instance(rng, max_states=3, max_actions=2, min_embodiments=1, max_embodiments=1)
        e = eset.embodiments[0]
        reward = rng.normal(size=e.num_states)
        got = truncated_return(e, pi, RewardTable(reward), 0.8, 5)
        assert got == pytest.approx(exhaustive_truncated_return(e, pi.probs, reward, 0.8, 5), abs=1e-12)


# ---------------------------------------------------------------- rollouts

def test_rollout_deterministic_mdp_independent_of_seed():
    e = chain(4)
    eset = EmbodimentSet((e,), np.array([1.0]), 1)
    a = rollout(eset, TabularPolicy.uniform(4, 1), 0, 6, seed=1)
    b = rollout(eset, TabularPolicy.uniform(4, 1), 0, 6, seed=999)
    assert a.states.tolist() == b.states.tolist() == [0, 1, 2, 3, 3, 3, 3]


def test_rollout_same_seed_identical():
    eset, pi = random_instance(2, max_states=4, max_actions=3)
    a = rollout(eset, pi, eset.ids[0], 50, seed=7)
    b = rollout(eset, pi, eset.ids[0], 50, seed=7)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.actions, b.actions)


def test_rollout_rejects_zero_horizon():
    eset, pi = random_instance(2)
    with pytest.raises(ModelError):
        rollout(eset, pi, eset.ids[0], 0)


def test_rollout_frequencies_match_occupancy():
    # 2000 episodes of 50 steps; each visit to s_t is weighted (1-gamma) gamma^t
    eset, pi = random_instance(4, max_states=4, max_actions=2, min_embodiments=1, max_embodiments=1)
    e = eset.embodiments[0]
    gamma, horizon = 0.8, 50
    rng = np.random.default_rng(0)
    weights = (1 - gamma) * gamma ** np.arange(horizon)
    freq = np.zeros(e.num_states)
    for _ in range(2000):
        traj = rollout(eset, pi, e.id, horizon, seed=rng)
        np.add.at(freq, traj.states[:-1], weights)
    freq /= freq.sum()
    assert np.abs(freq - occupancy(e, pi, gamma).dist).sum() < 0.02
