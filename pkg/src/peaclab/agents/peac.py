"""Reward-free pre-training (cross-embodiment reward, optionally with
surprise or skills) and extrinsic fine-tuning of the tabular agent.

Every loop alternates two phases. Collection runs one episode per scheduled
embodiment, each from that embodiment's own random stream, with frozen
parameters. The update phase then trains the discriminators, computes
rewards and applies actor-critic steps, visiting episodes in embodiment-id
order. The result depends only on the seed.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from ..inference import LearnedDiscriminator, context_bucket, trajectory_windows
from ..mdp import EmbodimentSet, ModelError, RewardTable, TabularPolicy, Trajectory
from ..rewards import IntrinsicRewardSpec, SkillDiscriminator, SurpriseModel, combined_reward, r_surprise
from .backbone import ActorCritic, _cdf
from .buffers import ReplayBuffer
from .config import TrainConfig

STAGES = {"pretrain": 0, "finetune": 1, "meta": 2, "evaluate": 3}


def stage_streams(seed: int, stage: str, count: int) -> list:
    """Independent generators for one training stage: one per embodiment
    position, then one for the update phase."""
    seq = np.random.SeedSequence([int(seed), STAGES[stage]])
    return [np.random.default_rng(s) for s in seq.spawn(count + 1)]


def weighted_round_robin(prior: np.ndarray, credit: np.ndarray) -> list:
    """One round of ``len(prior)`` episode slots, following the prior
    exactly over time (smooth weighted round robin). ``credit`` is updated
    in place and carries the remainder to the next round."""
    slots = []
    for _ in range(len(prior)):
        credit += prior
        k = int(np.argmax(credit))
        credit[k] -= 1.0
        slots.append(k)
    return sorted(slots)


def split_counts(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer counts summing to ``total`` by largest remainder."""
    raw = total * np.asarray(weights, dtype=float)
    counts = np.floor(raw).astype(np.int64)
    rest = total - int(counts.sum())
    if rest:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:rest]] += 1
    return counts


class AgentState:
    """Everything a training stage produces or resumes from."""

    def __init__(self, kind: str, eset: EmbodimentSet, config: TrainConfig, num_skills: int = 0):
        self.kind = kind
        self.config = config
        self.ids = list(eset.ids)
        self.prior = eset.prior.copy()
        self.num_states = eset.num_states
        self.num_actions = eset.unified_num_actions
        self.num_skills = num_skills
        m = len(self.ids)
        self.num_contexts = m + 1 if kind == "peac-diayn" else 0
        shape = (self.num_states, self.num_actions)
        if kind == "peac-diayn":
            shape = (num_skills, self.num_contexts) + shape
        self.actor = ActorCritic(shape, config.actor_lr, config.critic_lr, config.entropy)
        self.discriminator = LearnedDiscriminator(self.num_states, self.num_actions, self.ids,
                                                  config.history, config.disc_lr, config.disc_l2)
        self.surprise = (SurpriseModel(self.num_states, self.num_actions, config.surprise_alpha)
                         if "lbs" in config.reward.components else None)
        self.skill_disc = (SkillDiscriminator(self.num_states, num_skills, m, joint=True,
                                              step_size=config.skill_lr)
                           if kind == "peac-diayn" else None)
        self.buffers = {eid: ReplayBuffer(eid, config.buffer_size, config.horizon, config.history)
                        for eid in self.ids}
        self.steps = {"pretrain": 0, "finetune": 0}
        self.curves = {}

    @property
    def policy(self) -> TabularPolicy:
        return TabularPolicy(self.actor.probs, "skill-context" if self.kind == "peac-diayn" else "state")

    @property
    def critic(self) -> np.ndarray:
        return self.actor.values

    def state_dict(self) -> dict:
        out = {"actor." + k: v for k, v in self.actor.state_dict().items()}
        out.update({"discriminator." + k: v for k, v in self.discriminator.state_dict().items()})
        if self.surprise is not None:
            out["surprise.counts"] = self.surprise.counts.copy()
        if self.skill_disc is not None:
            out.update({"skill_disc." + k: v for k, v in self.skill_disc.state_dict().items()})
        out["steps.pretrain"] = np.array(self.steps["pretrain"])
        out["steps.finetune"] = np.array(self.steps["finetune"])
        return out

    def load_state_dict(self, state: dict) -> None:
        self.actor.load_state_dict({"logits": state["actor.logits"], "values": state["actor.values"]})
        self.discriminator.load_state_dict({"weights": state["discriminator.weights"],
                                            "bias": state["discriminator.bias"]})
        if self.surprise is not None:
            self.surprise.counts = np.array(state["surprise.counts"], dtype=float)
        if self.skill_disc is not None:
            self.skill_disc.load_state_dict({"weights": state["skill_disc.weights"],
                                             "bias": state["skill_disc.bias"]})
        self.steps = {"pretrain": int(state["steps.pretrain"]), "finetune": int(state["steps.finetune"])}

    def copy(self) -> "AgentState":
        """Copy with its own actor, discriminator, steps and curves; the
        surprise model, skill discriminator and buffers are shared."""
        other = AgentState.__new__(AgentState)
        other.__dict__.update(self.__dict__)
        other.actor = ActorCritic(self.actor.logits.shape, self.config.actor_lr, self.config.critic_lr,
                                  self.config.entropy, logits=self.actor.logits)
        other.actor.values = self.actor.values.copy()
        other.discriminator = LearnedDiscriminator(self.num_states, self.num_actions, self.ids,
                                                   self.config.history, self.config.disc_lr, self.config.disc_l2)
        other.discriminator.load_state_dict(self.discriminator.state_dict())
        other.steps = dict(self.steps)
        other.curves = {k: list(v) for k, v in self.curves.items()}
        return other


def fresh_agent(eset: EmbodimentSet, config: TrainConfig) -> AgentState:
    """Untrained state-only agent: uniform policy, zero critic."""
    return AgentState("peac", eset, config)


def _tables(eset: EmbodimentSet):
    return [(_cdf(e.unified_transition), _cdf(e.initial_dist)) for e in eset]


def _episode(p_cdf, mu_cdf, actor_cdf, horizon: int, rng):
    u = rng.random(2 * horizon + 1)
    states = np.empty(horizon + 1, dtype=np.int64)
    actions = np.empty(horizon, dtype=np.int64)
    s = int(np.searchsorted(mu_cdf, u[0], side="right"))
    states[0] = s
    for t in range(horizon):
        a = int(np.searchsorted(actor_cdf[s], u[2 * t + 1], side="right"))
        s = int(np.searchsorted(p_cdf[s, a], u[2 * t + 2], side="right"))
        actions[t], states[t + 1] = a, s
    return states, actions


def window_contexts(disc: LearnedDiscriminator, ids: np.ndarray, threshold: float) -> np.ndarray:
    """Context buckets for a batch of encoded windows, shape (N,)."""
    m = disc.num_classes
    if m == 1:
        return np.zeros(ids.shape[0], dtype=np.int64)
    probs = np.exp(disc.log_probs(ids))
    best = probs.argmax(axis=1)
    return np.where(probs[np.arange(len(best)), best] >= threshold, best, m)


def _skill_episode(p_cdf, mu_cdf, actor_cdf, skill: int, horizon: int, rng,
                   disc: LearnedDiscriminator, threshold: float, num_states: int, num_actions: int):
    """Episode of a skill-and-context policy; the context at time ``t``
    comes from the discriminator on the window ending at ``s_t``."""
    u = rng.random(2 * horizon + 1)
    states = np.empty(horizon + 1, dtype=np.int64)
    actions = np.empty(horizon, dtype=np.int64)
    contexts = np.empty(horizon + 1, dtype=np.int64)
    window = np.full(disc.history, -1, dtype=np.int64)
    single = disc.num_classes == 1
    s = int(np.searchsorted(mu_cdf, u[0], side="right"))
    states[0] = s
    for t in range(horizon + 1):
        if single:
            c = 0
        else:
            lp = disc.log_probs(window)[0]
            best = int(np.argmax(lp))
            c = best if math.exp(lp[best]) >= threshold else disc.num_classes
        contexts[t] = c
        if t == horizon:
            break
        a = int(np.searchsorted(actor_cdf[skill, c, s], u[2 * t + 1], side="right"))
        s_next = int(np.searchsorted(p_cdf[s, a], u[2 * t + 2], side="right"))
        window[:-1] = window[1:]
        window[-1] = (s * num_actions + a) * num_states + s_next
        actions[t], states[t + 1] = a, s_next
        s = s_next
    return states, actions, contexts


def _train_discriminator(agent: AgentState, rng) -> float:
    disc, config = agent.discriminator, agent.config
    if disc.num_classes == 1:
        return 0.0
    filled = np.array([len(agent.buffers[eid]) > 0 for eid in agent.ids], dtype=float)
    weights = agent.prior * filled
    counts = split_counts(config.disc_batch * len(agent.ids), weights / weights.sum())
    loss = 0.0
    for _ in range(config.disc_steps):
        batches, labels = [], []
        for k, eid in enumerate(agent.ids):
            if counts[k]:
                batches.append(agent.buffers[eid].sample_windows(rng, int(counts[k])))
                labels.append(np.full(counts[k], k))
        loss = disc.train_encoded(np.concatenate(batches), np.concatenate(labels))
    return loss


def _ce_rewards(agent: AgentState, windows: np.ndarray, position: int) -> np.ndarray:
    """Per-transition cross-embodiment reward from the windows ending at
    ``s_1 .. s_T``."""
    if agent.discriminator.num_classes == 1:
        return np.zeros(windows.shape[0] - 1)
    lq = agent.discriminator.log_probs(windows[1:])[:, position]
    return math.log(agent.prior[position]) - lq


def _record(curve: list, step: int, **metrics) -> None:
    for name in sorted(metrics):
        curve.append({"step": int(step), "metric": name, "value": float(metrics[name])})


def pretrain_peac(eset: EmbodimentSet, config: TrainConfig) -> AgentState:
    """Reward-free pre-training of a unified state-only policy on the
    cross-embodiment reward (optionally plus Bayesian surprise)."""
    if config.reward.kind not in ("CE", "CE+LBS"):
        raise ModelError(f"pretrain_peac supports reward kinds CE and CE+LBS, got {config.reward.kind}")
    agent = AgentState("peac", eset, config)
    curve = agent.curves.setdefault("pretrain", [])
    streams = stage_streams(config.seed, "pretrain", len(eset))
    tables = _tables(eset)
    credit = np.zeros(len(eset))
    horizon = config.horizon
    while agent.steps["pretrain"] < config.pretrain_steps:
        slots = weighted_round_robin(eset.prior, credit)
        episodes = []
        for k in slots:
            states, actions = _episode(*tables[k], agent.actor.cdf, horizon, streams[k])
            traj = Trajectory(agent.ids[k], states, actions)
            windows = trajectory_windows(traj, config.history, agent.num_states, agent.num_actions)
            agent.buffers[traj.embodiment_id].add(traj, windows)
            episodes.append((k, traj, windows))
        disc_loss = _train_discriminator(agent, streams[-1])
        total, ce_total, lbs_total = 0.0, 0.0, 0.0
        for k, traj, windows in episodes:
            r_ce = _ce_rewards(agent, windows, k)
            if agent.surprise is not None:
                r_lbs = np.array([r_surprise(agent.surprise, tr) for tr in traj.transitions()])
                rewards = np.array([combined_reward(config.reward, ce=c, lbs=b) for c, b in zip(r_ce, r_lbs)])
                lbs_total += float(r_lbs.sum())
            else:
                rewards = config.reward.weight("ce") * r_ce
            ce_total += float(r_ce.sum())
            total += float(rewards.sum())
            _update_state_only(agent.actor, traj, rewards, config.gamma)
        if config.debug:
            agent.actor.check_rows()
        n = len(episodes) * horizon
        agent.steps["pretrain"] += n
        metrics = {"intrinsic_reward": total / n, "r_ce": ce_total / n, "disc_loss": disc_loss}
        if agent.surprise is not None:
            metrics["r_lbs"] = lbs_total / n
        _record(curve, agent.steps["pretrain"], **metrics)
    return agent


def _update_state_only(actor: ActorCritic, traj: Trajectory, rewards, gamma: float) -> None:
    states, actions = traj.states, traj.actions
    for t in range(traj.length):
        actor.td_update(int(states[t]), int(actions[t]), float(rewards[t]), int(states[t + 1]), gamma)


def pretrain_peac_diayn(eset: EmbodimentSet, config: TrainConfig, K: int | None = None) -> AgentState:
    """Skill pre-training: a skill is drawn uniformly per episode and the
    policy, conditioned on (skill, context bucket, state), learns from the
    cross-embodiment reward plus the skill-discrimination reward.

    When ``config.reward`` is not a skill reward, ``CE+DIAYN`` with unit
    weights is used.
    """
    K = config.skills if K is None else K
    if K < 2:
        raise ModelError("skill pre-training needs K >= 2 skills")
    spec = config.reward
    if spec.kind not in ("CE+DIAYN", "DIAYN"):
        spec = IntrinsicRewardSpec("CE+DIAYN", skill_count=K)
    config = replace(config, reward=spec, skills=K)
    agent = AgentState("peac-diayn", eset, config, num_skills=K)
    curve = agent.curves.setdefault("pretrain", [])
    streams = stage_streams(config.seed, "pretrain", len(eset))
    tables = _tables(eset)
    credit = np.zeros(len(eset))
    horizon, log_k = config.horizon, math.log(K)
    while agent.steps["pretrain"] < config.pretrain_steps:
        slots = weighted_round_robin(eset.prior, credit)
        episodes = []
        for k in slots:
            rng = streams[k]
            z = int(rng.integers(K))
            states, actions, contexts = _skill_episode(
                *tables[k], agent.actor.cdf, z, horizon, rng, agent.discriminator,
                config.context_threshold, agent.num_states, agent.num_actions)
            traj = Trajectory(agent.ids[k], states, actions, z)
            windows = trajectory_windows(traj, config.history, agent.num_states, agent.num_actions)
            agent.buffers[traj.embodiment_id].add(traj, windows)
            episodes.append((k, traj, windows, contexts))
        disc_loss = _train_discriminator(agent, streams[-1])
        sd_states = np.concatenate([tr.states[1:] for _, tr, _, _ in episodes])
        sd_skills = np.concatenate([np.full(horizon, tr.skill_id) for _, tr, _, _ in episodes])
        sd_embs = np.concatenate([np.full(horizon, k) for k, _, _, _ in episodes])
        for _ in range(config.skill_steps):
            skill_loss = agent.skill_disc.train_step(sd_states, sd_skills, sd_embs)
        total, ce_total, diayn_total = 0.0, 0.0, 0.0
        for k, traj, windows, contexts in episodes:
            r_ce = _ce_rewards(agent, windows, k)
            lq = agent.skill_disc.skill_log_probs(traj.states[1:], embodiment=k)[:, traj.skill_id]
            r_diayn = lq + log_k
            if spec.kind == "DIAYN":
                rewards = spec.weight("diayn") * r_diayn
            else:
                rewards = spec.weight("ce") * r_ce + spec.weight("diayn") * r_diayn
            ce_total += float(r_ce.sum())
            diayn_total += float(r_diayn.sum())
            total += float(rewards.sum())
            z, states, actions = traj.skill_id, traj.states, traj.actions
            for t in range(horizon):
                agent.actor.td_update((z, int(contexts[t]), int(states[t])), int(actions[t]), float(rewards[t]),
                                      (z, int(contexts[t + 1]), int(states[t + 1])), config.gamma)
        if config.debug:
            agent.actor.check_rows()
        n = len(episodes) * horizon
        agent.steps["pretrain"] += n
        _record(curve, agent.steps["pretrain"], intrinsic_reward=total / n, r_ce=ce_total / n,
                r_diayn=diayn_total / n, disc_loss=disc_loss, skill_loss=skill_loss)
    return agent


FINETUNE_MODES = ("init-only", "kl-penalized")


def finetune(state: AgentState, eset: EmbodimentSet, extrinsic: RewardTable, config: TrainConfig | None = None,
             mode: str = "init-only") -> AgentState:
    """Extrinsic actor-critic from the pre-trained policy table.

    The actor starts from the pre-trained logits and the critic from zero.
    ``kl-penalized`` adds ``beta * KL(pi_pretrained(.|s) || pi(.|s))`` at
    every updated state, applied as a proximal step. The return curve lands
    in ``curves["finetune"]`` of the returned copy.
    """
    config = state.config if config is None else config
    if mode not in FINETUNE_MODES:
        raise ModelError(f"unknown fine-tuning mode {mode!r}; expected one of {FINETUNE_MODES}")
    if state.kind != "peac":
        raise ModelError("finetune expects a state-only agent; skill agents use finetune_meta_controller")
    reward = extrinsic.values if isinstance(extrinsic, RewardTable) else np.asarray(extrinsic, dtype=float)
    if reward.shape != (eset.num_states,):
        raise ModelError(f"reward table has shape {reward.shape}, expected ({eset.num_states},)")
    if eset.num_states != state.num_states or eset.unified_num_actions != state.num_actions:
        raise ModelError("embodiment set does not match the agent's tables")
    agent = state.copy()
    agent.config = config
    actor = ActorCritic(state.actor.logits.shape, config.actor_lr, config.critic_lr, config.entropy,
                        logits=state.actor.logits)
    if mode == "kl-penalized":
        actor.set_anchor(state.actor.probs.copy(), config.beta)
    agent.actor = actor
    agent.steps["finetune"] = 0
    curve = agent.curves.setdefault("finetune", [])
    curve.clear()
    streams = stage_streams(config.seed, "finetune", len(eset))
    tables = _tables(eset)
    credit = np.zeros(len(eset))
    discounts = config.gamma ** np.arange(config.horizon)
    while agent.steps["finetune"] < config.finetune_steps:
        slots = weighted_round_robin(eset.prior, credit)
        episodes = [(k, _episode(*tables[k], actor.cdf, config.horizon, streams[k])) for k in slots]
        returns = []
        for k, (states, actions) in episodes:
            r = reward[states[:-1]]
            returns.append(float(discounts @ r))
            for t in range(config.horizon):
                actor.td_update(int(states[t]), int(actions[t]), float(r[t]), int(states[t + 1]), config.gamma)
        if config.debug:
            actor.check_rows()
        agent.steps["finetune"] += len(episodes) * config.horizon
        _record(curve, agent.steps["finetune"], episode_return=float(np.mean(returns)))
    return agent
