import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from peaclab.agents import (
    ActorCritic,
    TrainConfig,
    analytic_return_gradient,
    evaluate,
    finetune,
    finetune_meta_controller,
    fresh_agent,
    kl_prox,
    mean_pairwise_l1,
    pretrain_peac,
    pretrain_peac_diayn,
    reinforce_gradient_by_enumeration,
    skill_occupancies,
    stage_streams,
)
from peaclab.agents.backbone import entropy_gradient
from peaclab.envs import DOWN, RIGHT, UP, LEFT, EnvSpec, appendix_a1, build_env, downstream_reward, train_test_split
from peaclab.mdp import Embodiment, EmbodimentSet, ModelError, RewardTable, TabularPolicy, softmax, truncated_return
from peaclab.oracle import random_instance


def tiny_config(**kw):
    base = dict(pretrain_steps=2000, horizon=10, seed=0, gamma=0.9, history=4, disc_batch=16)
    base.update(kw)
    return TrainConfig(**base)


def corner_grid(start="0,0"):
    spec = EnvSpec("grid-slip", rows=3, cols=3, levels=(0.0,), start=start)
    return spec, build_env(spec)


# ---------------------------------------------------------------- backbone

def test_policy_gradient_matches_enumerated_reinforce():
    rng = np.random.default_rng(0)
    p = rng.dirichlet(np.ones(2), size=(2, 2))
    emb = Embodiment(0, p, np.array([0.3, 0.7]), np.array([0, 1]))
    logits = rng.normal(size=(2, 2))
    reward = np.array([1.0, -0.5])
    for horizon in (1, 2, 4):
        exact = analytic_return_gradient(emb, logits, reward, 0.9, horizon)
        enumerated = reinforce_gradient_by_enumeration(emb, logits, reward, 0.9, horizon)
        assert np.allclose(exact, enumerated, atol=1e-4)
        # and against a finite difference of the exact truncated return
        fd = np.zeros_like(logits)
        h = 1e-6
        for idx in np.ndindex(*logits.shape):
            up, dn = logits.copy(), logits.copy()
            up[idx] += h
            dn[idx] -= h
            f = lambda z: truncated_return(emb, TabularPolicy(softmax(z)), RewardTable(reward), 0.9, horizon)  # noqa: E731
            fd[idx] = (f(up) - f(dn)) / (2 * h)
        assert np.allclose(exact, fd, atol=1e-6)


def test_entropy_gradient_finite_difference():
    row = np.array([0.3, -1.0, 2.0, 0.1])
    h = 1e-6

    def ent(z):
        p = softmax(z)
        return -float(p @ np.log(p))

    fd = np.array([(ent(row + h * e) - ent(row - h * e)) / (2 * h) for e in np.eye(4)])
    assert np.allclose(entropy_gradient(row), fd, atol=1e-8)


def test_critic_reaches_td_fixed_point():
    # deterministic two-state cycle with a fixed action: V = r + gamma P V
    actor = ActorCritic((2, 1), critic_lr=0.2)
    reward, gamma = np.array([1.0, -2.0]), 0.9
    s = 0
    for _ in range(4000):
        actor.critic_step(s, reward[s] + gamma * actor.values[1 - s])
        s = 1 - s
    exact = np.linalg.solve(np.eye(2) - gamma * np.array([[0, 1], [1, 0]]), reward)
    assert np.allclose(actor.values, exact, atol=1e-3)


def test_actor_step_direction_and_simplex():
    actor = ActorCritic((1, 3), entropy=0.0)
    actor.actor_step(0, 2, advantage=1.0)
    assert actor.probs[0, 2] > 1 / 3
    actor.actor_step(0, 1, advantage=-5.0)
    assert actor.probs[0, 1] < 1 / 3
    actor.check_rows()
    actor.probs[0, 0] = 2.0
    with pytest.raises(ModelError):
        actor.check_rows()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 1e4))
def test_kl_prox_optimality(seed, weight):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=4) * 3
    anchor = rng.dirichlet(np.ones(4))
    x = kl_prox(v, anchor, weight)
    grad = x - v + weight * (softmax(x) - anchor)
    assert np.max(np.abs(grad)) <= 1e-8 * (1 + weight)


def test_kl_prox_limits():
    v = np.array([1.0, -2.0, 0.5])
    anchor = np.array([0.2, 0.5, 0.3])
    assert np.array_equal(kl_prox(v, anchor, 0.0), v)
    assert np.allclose(softmax(kl_prox(v, anchor, 1e8)), anchor, atol=1e-6)


def test_negative_kl_weight_rejected():
    actor = ActorCritic((2, 2))
    with pytest.raises(ModelError):
        actor.set_anchor(actor.probs.copy(), -1.0)


# ---------------------------------------------------------------- pre-training

def test_pretraining_deterministic_per_seed():
    eset = appendix_a1(0.9)
    a = pretrain_peac(eset, tiny_config(seed=3))
    b = pretrain_peac(eset, tiny_config(seed=3))
    c = pretrain_peac(eset, tiny_config(seed=4))
    assert np.array_equal(a.actor.logits, b.actor.logits)
    assert np.array_equal(a.discriminator.weights, b.discriminator.weights)
    assert a.curves == b.curves
    assert not np.array_equal(a.actor.logits, c.actor.logits)


def test_stage_streams_independent_of_count_and_stage():
    a = stage_streams(5, "pretrain", 2)
    b = stage_streams(5, "pretrain", 2)
    assert a[0].random() == b[0].random()
    assert stage_streams(5, "finetune", 2)[0].random() != stage_streams(5, "pretrain", 2)[0].random()


def test_identical_dynamics_stay_near_uniform():
    eset, _ = random_instance(1, min_embodiments=1, max_embodiments=1, max_states=3, max_actions=2)
    e = eset.embodiments[0]
    twins = EmbodimentSet((e, Embodiment(1, e.transition, e.initial_dist, e.action_projector)),
                          np.array([0.5, 0.5]), eset.unified_num_actions)
    agent = pretrain_peac(twins, tiny_config(pretrain_steps=10_000))
    uniform = 1.0 / twins.unified_num_actions
    assert np.max(np.abs(agent.actor.probs - uniform)) < 0.1


def test_pretraining_budget_and_curves():
    eset = appendix_a1(0.9)
    agent = pretrain_peac(eset, tiny_config(pretrain_steps=1000, horizon=10))
    # whole rounds of one episode per embodiment
    assert 1000 <= agent.steps["pretrain"] < 1000 + len(eset) * 10
    names = {row["metric"] for row in agent.curves["pretrain"]}
    assert names == {"intrinsic_reward", "r_ce", "disc_loss"}


def test_surprise_component_recorded():
    from peaclab.rewards import IntrinsicRewardSpec
    agent = pretrain_peac(appendix_a1(0.9), tiny_config(pretrain_steps=400, reward=IntrinsicRewardSpec("CE+LBS")))
    assert "r_lbs" in {row["metric"] for row in agent.curves["pretrain"]}
    assert agent.surprise.counts.sum() == agent.steps["pretrain"]


def test_skill_pretraining_validation_and_shapes():
    eset = appendix_a1(0.9)
    with pytest.raises(ModelError):
        pretrain_peac_diayn(eset, tiny_config(), K=1)
    agent = pretrain_peac_diayn(eset, tiny_config(pretrain_steps=500), K=3)
    assert agent.actor.probs.shape == (3, len(eset) + 1, 2, 2)
    assert agent.config.reward.kind == "CE+DIAYN"
    occ = skill_occupancies(agent, eset)
    assert occ.shape == (3, 2) and np.allclose(occ.sum(axis=1), 1.0)
    assert 0.0 <= mean_pairwise_l1(occ) <= 2.0
    with pytest.raises(ModelError):
        skill_occupancies(fresh_agent(eset, tiny_config()), eset)
    with pytest.raises(ModelError):
        mean_pairwise_l1(occ[:1])


def test_pretrain_peac_rejects_skill_reward():
    from peaclab.rewards import IntrinsicRewardSpec
    with pytest.raises(ModelError):
        pretrain_peac(appendix_a1(0.9), tiny_config(reward=IntrinsicRewardSpec("CE+DIAYN", skill_count=2)))


def test_debug_mode_checks_rows():
    agent = pretrain_peac(appendix_a1(0.9), tiny_config(pretrain_steps=200, debug=True))
    agent.actor.check_rows()


# ---------------------------------------------------------------- fine-tuning

def pretrained_corner_agent(cfg):
    spec, eset = corner_grid()
    agent = fresh_agent(eset, cfg)
    logits = np.zeros_like(agent.actor.logits)
    logits[:, UP] = 3.0
    agent.actor.load_state_dict({"logits": logits, "values": np.zeros(eset.num_states)})
    return spec, eset, agent


def test_kl_penalized_huge_beta_stays_at_pretrained_policy():
    cfg = tiny_config(finetune_steps=2000, beta=1e6)
    spec, eset, agent = pretrained_corner_agent(cfg)
    tuned = finetune(agent, eset, downstream_reward(spec, "goal"), cfg, mode="kl-penalized")
    tv = 0.5 * np.abs(tuned.actor.probs - agent.actor.probs).sum(axis=-1)
    assert tv.max() < 0.01
    assert np.array_equal(tuned.actor.probs.argmax(axis=-1), agent.actor.probs.argmax(axis=-1))


def test_kl_penalized_zero_beta_equals_init_only():
    cfg = tiny_config(finetune_steps=2000, beta=0.0)
    spec, eset, agent = pretrained_corner_agent(cfg)
    reward = downstream_reward(spec, "goal")
    a = finetune(agent, eset, reward, cfg, mode="kl-penalized")
    b = finetune(agent, eset, reward, cfg, mode="init-only")
    assert np.array_equal(a.actor.logits, b.actor.logits)
    assert a.curves["finetune"] == b.curves["finetune"]


def test_finetune_leaves_pretrained_agent_untouched_and_learns():
    cfg = tiny_config(pretrain_steps=4000, finetune_steps=4000)
    spec, eset, agent = pretrained_corner_agent(cfg)
    before = agent.actor.logits.copy()
    reward = downstream_reward(spec, "goal")
    tuned = finetune(agent, eset, reward, cfg)
    assert np.array_equal(agent.actor.logits, before)
    ret = lambda a: evaluate(a, eset, reward, episodes=200)[0]["analytic"]  # noqa: E731
    assert ret(tuned) > ret(agent)


def test_finetune_validation():
    cfg = tiny_config()
    spec, eset, agent = pretrained_corner_agent(cfg)
    with pytest.raises(ModelError):
        finetune(agent, eset, np.zeros(3), cfg)
    with pytest.raises(ModelError):
        finetune(agent, eset, downstream_reward(spec, "goal"), cfg, mode="frozen")
    skills = pretrain_peac_diayn(eset, tiny_config(pretrain_steps=200), K=2)
    with pytest.raises(ModelError):
        finetune(skills, eset, downstream_reward(spec, "goal"), cfg)


# ---------------------------------------------------------------- evaluation

def test_evaluate_zero_reward():
    spec, eset = corner_grid()
    out = evaluate(TabularPolicy.uniform(eset.num_states, 5), eset, np.zeros(eset.num_states), episodes=100)
    assert out[0]["mc_mean"] == 0.0 and out[0]["analytic"] == 0.0 and out[0]["mc_stderr"] == 0.0


def test_evaluate_monte_carlo_agrees_with_analytic():
    spec = EnvSpec("grid-slip", rows=3, cols=3, levels=(0.0, 0.2, 0.4))
    eset = build_env(spec)
    pi = TabularPolicy(np.random.default_rng(0).dirichlet(np.ones(5), size=eset.num_states))
    out = evaluate(pi, eset, downstream_reward(spec, "goal"), episodes=4000, seed=2, horizon=30, gamma=0.95)
    for entry in out.values():
        assert abs(entry["mc_mean"] - entry["analytic"]) <= 3 * entry["mc_stderr"]
        assert entry["analytic_infinite"] >= entry["analytic"]


def test_evaluate_held_out_embodiments():
    spec = EnvSpec("grid-slip", rows=3, cols=3, levels=(0.0, 0.1, 0.2, 0.3))
    train, held = train_test_split(spec)
    pi = TabularPolicy.uniform(train.num_states, 5)
    reward = downstream_reward(spec, "goal")
    out = evaluate(pi, held, reward, episodes=50)
    assert sorted(out) == sorted(held.ids)
    for e in held:
        assert out[e.id]["analytic"] == pytest.approx(
            truncated_return(e, pi, reward, held.discount, 40), abs=1e-12)


def test_evaluate_validation():
    spec, eset = corner_grid()
    with pytest.raises(ModelError):
        evaluate(TabularPolicy.uniform(eset.num_states, 5), eset, np.zeros(2))
    with pytest.raises(ModelError):
        evaluate(TabularPolicy.uniform(eset.num_states, 5), eset, np.zeros(eset.num_states), episodes=1)
    skills = pretrain_peac_diayn(eset, tiny_config(pretrain_steps=200), K=2)
    with pytest.raises(ModelError):
        evaluate(skills, eset, np.zeros(eset.num_states))
    assert evaluate(skills, eset, np.zeros(eset.num_states), episodes=5, skill=1)[0]["analytic"] is None


# ---------------------------------------------------------------- meta-controller

def hand_skills(eset, cfg, moves):
    agent = pretrain_peac_diayn(eset, replace_steps(cfg, 100), K=len(moves))
    logits = np.zeros_like(agent.actor.logits)
    for z, mv in enumerate(moves):
        for a in mv:
            logits[z, ..., a] = 4.0
    agent.actor.load_state_dict({"logits": logits, "values": np.zeros(agent.actor.values.shape)})
    return agent


def replace_steps(cfg, n):
    from dataclasses import replace
    return replace(cfg, pretrain_steps=n, finetune_steps=0)


def test_meta_controller_picks_the_solving_skill():
    spec, eset = corner_grid()
    cfg = tiny_config(pretrain_steps=6000, finetune_steps=6000, horizon=12, skill_horizon=4)
    agent = hand_skills(eset, cfg, [(DOWN, RIGHT), (UP, LEFT)])
    controller = finetune_meta_controller(agent, eset, downstream_reward(spec, "goal"), cfg)
    assert controller.probs[0, 0, 0] >= 0.8
    assert controller.curve and controller.curve[-1]["metric"] == "episode_return"


def test_meta_controller_indifferent_between_identical_skills():
    spec, eset = corner_grid()
    picks = []
    for seed in range(6):
        cfg = tiny_config(pretrain_steps=3000, finetune_steps=3000, horizon=12, skill_horizon=4, seed=seed)
        agent = hand_skills(eset, cfg, [(DOWN, RIGHT), (DOWN, RIGHT)])
        controller = finetune_meta_controller(agent, eset, downstream_reward(spec, "goal"), cfg)
        picks.append(controller.probs[0, 0, 0])
    assert abs(np.mean(picks) - 0.5) < 0.15


def test_meta_controller_deterministic_and_validated():
    spec, eset = corner_grid()
    cfg = tiny_config(pretrain_steps=1000, finetune_steps=1000, horizon=12, skill_horizon=4)
    agent = hand_skills(eset, cfg, [(DOWN, RIGHT), (UP, LEFT)])
    reward = downstream_reward(spec, "goal")
    a = finetune_meta_controller(agent, eset, reward, cfg)
    b = finetune_meta_controller(agent, eset, reward, cfg)
    assert np.array_equal(a.learner.logits, b.learner.logits)
    out = evaluate(a, eset, reward, episodes=20)
    assert math.isfinite(out[0]["mc_mean"]) and out[0]["analytic"] is None
    with pytest.raises(ModelError):
        finetune_meta_controller(fresh_agent(eset, cfg), eset, reward, cfg)
    with pytest.raises(ModelError):
        finetune_meta_controller(agent, eset, np.zeros(4), cfg)


# ---------------------------------------------------------------- configuration

@pytest.mark.parametrize("kw", [
    dict(pretrain_steps=0), dict(gamma=1.0), dict(actor_lr=0.0), dict(beta=-1.0),
    dict(finetune_steps=10**9), dict(context_threshold=0.0), dict(entropy=-0.1),
])
def test_train_config_validation(kw):
    with pytest.raises(ModelError):
        TrainConfig(**kw)


def test_train_config_defaults():
    cfg = TrainConfig()
    assert cfg.finetune_steps == cfg.pretrain_steps // 10
    assert cfg.actor_lr == 0.1 and cfg.critic_lr == 0.2 and cfg.entropy == 0.01
    assert cfg.to_dict()["reward"]["kind"] == cfg.reward.kind
