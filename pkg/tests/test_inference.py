import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from peaclab.envs import appendix_a1
from peaclab.inference import (
    ExactPosterior,
    HistoryWindow,
    ImpossibleEvidence,
    LearnedDiscriminator,
    batch_posterior,
    classify,
    context_bucket,
    embodiment_context,
    exact_posterior_of_trajectory,
    posterior_update,
    train_discriminator,
    trajectory_windows,
)
from peaclab.mdp import Embodiment, EmbodimentSet, ModelError, TabularPolicy, Trajectory, rollout
from peaclab.oracle import random_instance
from peaclab.trajspace import enumerate_space


def two_state_set(p1=0.8, p2=0.2):
    def emb(i, p):
        t = np.array([[[1 - p, p]], [[0.5, 0.5]]])
        return Embodiment(i, t, np.array([1.0, 0.0]), np.array([0]))
    return EmbodimentSet((emb(0, p1), emb(1, p2)), np.array([0.5, 0.5]), 1)


# ---------------------------------------------------------------- exact posterior

def test_single_bayes_step():
    eset = two_state_set()
    post = posterior_update(ExactPosterior.from_prior(eset), eset, None, (0, 0, 1))
    assert np.allclose(post.probs, [0.8, 0.2], atol=1e-12)


def test_identical_dynamics_keep_prior():
    eset, pi = random_instance(0, min_embodiments=1, max_embodiments=1)
    e = eset.embodiments[0]
    twins = EmbodimentSet((e, Embodiment(1, e.transition, e.initial_dist, e.action_projector)),
                          np.array([0.3, 0.7]), eset.unified_num_actions)
    traj = rollout(twins, pi, 0, 10, seed=3)
    post = exact_posterior_of_trajectory(twins, pi, traj)
    assert np.allclose(post.probs, [0.3, 0.7], atol=1e-12)


def test_two_state_identifies_embodiment():
    eset = appendix_a1(0.9)
    post = posterior_update(ExactPosterior.from_prior(eset), eset, None, (0, 0, 0))
    assert post.probs.tolist() == [1.0, 0.0]


def test_impossible_evidence():
    eset = appendix_a1(0.9)
    post = posterior_update(ExactPosterior.from_prior(eset), eset, None, (0, 0, 0))
    with pytest.raises(ImpossibleEvidence):
        posterior_update(post, eset, None, (0, 0, 1))


def test_empty_trajectory_gives_prior():
    eset, pi = random_instance(1)
    e = eset.embodiments[0]
    # shared initial distribution so the start state carries no evidence
    same = EmbodimentSet(tuple(Embodiment(x.id, x.transition, e.initial_dist, x.action_projector) for x in eset),
                         eset.prior, eset.unified_num_actions)
    post = exact_posterior_of_trajectory(same, pi, Trajectory(0, np.array([0]), np.array([], dtype=int)))
    assert np.allclose(post.probs, eset.prior, atol=1e-12)


def test_fold_equals_batch_on_100_trajectories():
    rng = np.random.default_rng(0)
    worst = 0.0
    for i in range(100):
        eset, pi = random_instance(rng, max_states=4, max_actions=3, sparsity=0.3 if i % 2 else 0.0)
        eid = int(rng.choice(eset.ids))
        traj = rollout(eset, pi, eid, int(rng.integers(1, 12)), seed=rng)
        fold = exact_posterior_of_trajectory(eset, pi, traj).probs
        batch = batch_posterior(eset, pi, traj).probs
        worst = max(worst, float(np.max(np.abs(fold - batch))))
    assert worst < 1e-10


def test_one_hot_when_only_one_embodiment_possible():
    eset = appendix_a1(0.9)
    pi = TabularPolicy.uniform(2, 2)
    traj = Trajectory(1, np.array([0, 1, 1]), np.array([0, 1]))
    assert exact_posterior_of_trajectory(eset, pi, traj).probs.tolist() == [0.0, 1.0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_bayes_consistency_and_calibration(seed, horizon):
    eset, pi = random_instance(seed, max_states=3, max_actions=2)
    space = enumerate_space(eset, pi, horizon)
    mix = space.mixture
    total = np.zeros(len(eset))
    for i in np.nonzero(mix > 0)[0]:
        traj = Trajectory(-1, space.states[i], space.actions[i])
        post = exact_posterior_of_trajectory(eset, pi, traj).probs
        joint = eset.prior * space.probs[:, i]
        assert np.max(np.abs(post - joint / joint.sum())) < 1e-10
        total += mix[i] * post
    assert np.max(np.abs(total - eset.prior)) < 1e-9


def test_identical_transition_never_moves_posterior():
    eset, pi = random_instance(9, max_states=3)
    # make state 0 / action 0 identical across embodiments
    e0 = eset.embodiments[0]
    members = []
    for e in eset:
        t = e.transition.copy()
        t[0, e.action_projector[0]] = e0.transition[0, e0.action_projector[0]]
        members.append(Embodiment(e.id, t, e.initial_dist, e.action_projector))
    same = EmbodimentSet(tuple(members), eset.prior, eset.unified_num_actions)
    post = ExactPosterior.from_prior(same)
    post = posterior_update(post, same, pi, (1, 0, 1))
    after = posterior_update(post, same, pi, (0, 0, 1))
    assert np.allclose(after.probs, post.probs, atol=1e-15)


# ---------------------------------------------------------------- learned discriminator

def random_windows(rng, disc, n):
    ids = rng.integers(-1, disc.num_features, size=(n, disc.history))
    labels = rng.integers(0, disc.num_classes, size=n)
    return ids, labels


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(5):
        disc = LearnedDiscriminator(3, 2, [0, 1, 2], history=4, l2=1e-3)
        disc.weights[:, :-1] = rng.normal(size=(3, disc.num_features))
        disc.bias[:] = rng.normal(size=3)
        enc, labels = random_windows(rng, disc, 16)
        gw, gb, _ = disc.gradient(enc, labels)
        h = 1e-6
        for idx in list(zip(rng.integers(0, 3, 20), rng.integers(0, disc.num_features, 20))):
            disc.weights[idx] += h
            up = disc.objective(enc, labels)
            disc.weights[idx] -= 2 * h
            down = disc.objective(enc, labels)
            disc.weights[idx] += h
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - gw[idx]) / max(1e-8, abs(fd), abs(gw[idx])))
        for k in range(3):
            disc.bias[k] += h
            up = disc.objective(enc, labels)
            disc.bias[k] -= 2 * h
            down = disc.objective(enc, labels)
            disc.bias[k] += h
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - gb[k]) / max(1e-8, abs(fd), abs(gb[k])))
    assert worst < 1e-5


def test_initial_loss_is_log_m():
    disc = LearnedDiscriminator(3, 2, [0, 1, 2, 3])
    enc, labels = random_windows(np.random.default_rng(1), disc, 32)
    assert disc.train_encoded(enc, labels) == pytest.approx(math.log(4), abs=1e-12)


def test_repeated_single_example_converges():
    disc = LearnedDiscriminator(3, 2, [0, 1], history=4, step_size=0.5)
    window = HistoryWindow(np.array([[0, 1], [1, 0], [2, 1], [0, 0]]), 2)
    for _ in range(500):
        loss = train_discriminator(disc, [(window, 1)] * 8)
    assert loss < 0.01


def test_shuffled_labels_plateau_near_log_two():
    rng = np.random.default_rng(0)
    disc = LearnedDiscriminator(3, 2, [0, 1], history=4)
    enc = rng.integers(0, disc.num_features, size=(400, disc.history))
    labels = rng.permutation(np.repeat([0, 1], 200))
    for _ in range(300):
        loss = disc.train_encoded(enc, labels)
    assert 0.55 < loss < math.log(2) + 1e-9


def test_classify_examples():
    disc = LearnedDiscriminator(3, 2, [0, 1], history=3)
    pad = HistoryWindow.padding(3, 3, 2, current_state=1)
    assert np.allclose(np.exp(classify(disc, pad)), [0.5, 0.5])
    disc.bias[:] = [1.0, -1.0]
    disc.weights[:, :-1] = 5.0  # ignored by padding-only windows
    expected = np.exp([1.0, -1.0]) / np.exp([1.0, -1.0]).sum()
    assert np.allclose(np.exp(classify(disc, pad)), expected, atol=1e-12)


def test_separable_windows_classified():
    rng = np.random.default_rng(0)
    eset = appendix_a1(0.9)
    pi = TabularPolicy.uniform(2, 2)
    disc = LearnedDiscriminator(2, 2, eset.ids, history=4)
    data = []
    for k in range(200):
        eid = k % 2
        traj = rollout(eset, pi, eid, 6, seed=rng)
        data.append((trajectory_windows(traj, 4, 2, 2)[1:], eid))
    enc = np.concatenate([w for w, _ in data])
    labels = np.concatenate([np.full(len(w), e) for w, e in data])
    for _ in range(300):
        disc.train_encoded(enc, labels)
    acc = np.mean(np.argmax(disc.log_probs(enc), axis=1) == labels)
    assert acc >= 0.95


def test_window_encoding_and_padding():
    traj = Trajectory(0, np.array([0, 1, 1, 0]), np.array([1, 0, 1]))
    w = HistoryWindow.from_trajectory(traj, 2, 3, 2, 2)
    assert w.pairs.tolist() == [[2, 2], [0, 1], [1, 0]] and w.current_state == 1
    disc = LearnedDiscriminator(2, 2, [0, 1], history=3)
    enc = disc.encode(w)
    assert enc.tolist() == [-1, (0 * 2 + 1) * 2 + 1, (1 * 2 + 0) * 2 + 1]
    assert np.array_equal(enc, trajectory_windows(traj, 3, 2, 2)[2])
    with pytest.raises(ModelError):
        LearnedDiscriminator(2, 2, [0, 1], history=4).encode(w)


def test_learned_output_is_log_distribution():
    rng = np.random.default_rng(0)
    disc = LearnedDiscriminator(3, 2, [0, 1, 2], history=4)
    disc.weights[:, :-1] = rng.normal(size=(3, disc.num_features)) * 10
    enc, _ = random_windows(rng, disc, 50)
    lp = disc.log_probs(enc)
    assert np.allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-12)


def test_state_dict_round_trip():
    disc = LearnedDiscriminator(3, 2, [0, 1])
    disc.weights += 0.25
    other = LearnedDiscriminator(3, 2, [0, 1])
    other.load_state_dict(disc.state_dict())
    assert np.array_equal(other.weights, disc.weights)


# ---------------------------------------------------------------- context

def test_embodiment_context_wiring():
    eset = appendix_a1(0.9)
    prior = ExactPosterior.from_prior(eset)
    assert np.allclose(embodiment_context(prior), [0.5, 0.5])
    onehot = posterior_update(prior, eset, None, (0, 0, 0))
    assert embodiment_context(onehot).tolist() == [1.0, 0.0]
    rng = np.random.default_rng(0)
    disc = LearnedDiscriminator(2, 2, [0, 1], history=3)
    disc.weights[:, :-1] = rng.normal(size=(2, disc.num_features))
    w = HistoryWindow(np.array([[0, 1], [1, 1], [0, 0]]), 0)
    assert np.array_equal(embodiment_context(disc, w), np.exp(classify(disc, w)))
    with pytest.raises(ModelError):
        embodiment_context(disc)


def test_context_bucket():
    assert context_bucket(np.array([0.7, 0.3])) == 0
    assert context_bucket(np.array([0.55, 0.45])) == 2
    assert context_bucket(np.array([0.1, 0.2, 0.7]), threshold=0.6) == 2
    assert context_bucket(np.array([0.4, 0.3, 0.3])) == 3


def test_product_of_all_windows_small_space():
    # every window of a 2-state, 1-action space under history 2 encodes into valid columns
    disc = LearnedDiscriminator(2, 1, [0, 1], history=2)
    for states in itertools.product(range(2), repeat=3):
        traj = Trajectory(0, np.array(states), np.zeros(2, dtype=int))
        enc = trajectory_windows(traj, 2, 2, 1)
        assert enc.max() < disc.num_features and enc.min() >= -1
