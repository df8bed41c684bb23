"""Experiment orchestration: pretrain, fine-tune per downstream task,
evaluate on training and held-out embodiments, and the seed-level
comparison of pre-trained against random initialization."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import replace
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..agents import (
    AgentState,
    MetaController,
    evaluate,
    finetune,
    finetune_meta_controller,
    fresh_agent,
    pretrain_peac,
    pretrain_peac_diayn,
)
from ..envs import build_env, downstream_reward, train_test_split
from .config import ExperimentConfig, load_config
from .records import RunRecord, load_checkpoint

STAGE_ORDER = ("pretrain", "finetune", "evaluate")


def environment_sets(cfg: ExperimentConfig):
    """Training set and held-out set (``None`` without a split)."""
    if cfg.split:
        return train_test_split(cfg.env, cfg.seed)
    return build_env(cfg.env), None


def _restore_agent(cfg: ExperimentConfig, eset, tensors: dict) -> AgentState:
    if cfg.agent == "peac-diayn":
        agent = AgentState("peac-diayn", eset, cfg.train, num_skills=cfg.train.skills)
    else:
        agent = AgentState("peac", eset, cfg.train)
    agent.load_state_dict(tensors)
    return agent


def _eval_rows(result: dict, split: str, step: int) -> list:
    rows, scores = [], []
    for eid in sorted(result):
        entry = result[eid]
        for key in ("mc_mean", "mc_stderr", "analytic", "analytic_infinite"):
            if entry[key] is not None:
                rows.append({"step": step, "metric": f"{split}.e{eid}.{key}", "value": entry[key]})
        scores.append(entry["analytic"] if entry["analytic"] is not None else entry["mc_mean"])
    rows.append({"step": step, "metric": f"{split}.score", "value": float(np.mean(scores))})
    return rows


def run_experiment(config, seed: int | None = None, out_dir="runs", until: str = "evaluate",
                   log=None) -> tuple:
    """Run (or resume) the pipeline up to ``until``; returns ``(0, record)``.

    Committed stages are loaded from their checkpoints instead of being
    recomputed, so rerunning a finished configuration changes nothing.
    """
    cfg = load_config(config) if not isinstance(config, ExperimentConfig) else config
    if seed is not None:
        cfg = cfg.with_seed(seed)
    if until not in STAGE_ORDER:
        raise ValueError(f"unknown stage {until!r}")
    say = log or (lambda msg: None)
    depth = STAGE_ORDER.index(until)
    train_set, heldout = environment_sets(cfg)
    record = RunRecord.open(out_dir, cfg.snapshot())

    if record.done("pretrain"):
        agent = _restore_agent(cfg, train_set, load_checkpoint(record.dir / record.stage_info("pretrain")["checkpoint"]))
        say(f"[{record.run_id}] pretrain: resumed from checkpoint")
    else:
        t0 = time.perf_counter()
        if cfg.agent == "peac-diayn":
            agent = pretrain_peac_diayn(train_set, cfg.train, cfg.train.skills)
        else:
            agent = pretrain_peac(train_set, cfg.train)
        record.commit("pretrain", agent.curves["pretrain"], agent.state_dict(), time.perf_counter() - t0)
        say(f"[{record.run_id}] pretrain: {agent.steps['pretrain']} steps")
    if depth < 1:
        return 0, record

    arms = ["pretrained"] + (["random"] if cfg.baseline else [])
    tuned = {}
    for task in cfg.tasks:
        reward = downstream_reward(cfg.env, task)
        for arm in arms:
            stage = f"finetune.{task}.{arm}"
            meta = arm == "pretrained" and cfg.agent == "peac-diayn"
            if record.done(stage):
                tensors = load_checkpoint(record.dir / record.stage_info(stage)["checkpoint"])
                if meta:
                    result = MetaController(agent, cfg.train)
                    result.load_state_dict(tensors)
                else:
                    result = _restore_agent(replace(cfg, agent="peac"), train_set, tensors)
                say(f"[{record.run_id}] {stage}: resumed from checkpoint")
            else:
                t0 = time.perf_counter()
                if meta:
                    result = finetune_meta_controller(agent, train_set, reward, cfg.train)
                    rows = result.curve
                else:
                    start = agent if arm == "pretrained" else fresh_agent(train_set, cfg.train)
                    result = finetune(start, train_set, reward, cfg.train, cfg.mode)
                    rows = result.curves["finetune"]
                record.commit(stage, rows, result.state_dict(), time.perf_counter() - t0)
                say(f"[{record.run_id}] {stage}: done")
            tuned[(task, arm)] = result
    if depth < 2:
        return 0, record

    step = cfg.train.finetune_steps
    for (task, arm), result in tuned.items():
        stage = f"evaluate.{task}.{arm}"
        if record.done(stage):
            continue
        t0 = time.perf_counter()
        reward = downstream_reward(cfg.env, task)
        rows = _eval_rows(evaluate(result, train_set, reward, cfg.episodes, cfg.seed), "train", step)
        if heldout is not None:
            rows += _eval_rows(evaluate(result, heldout, reward, cfg.episodes, cfg.seed), "heldout", step)
        record.commit(stage, rows, None, time.perf_counter() - t0)
        score = [r["value"] for r in rows if r["metric"] == "train.score"][0]
        say(f"[{record.run_id}] {stage}: train score {score:.6g}")
    return 0, record


def _score(record: RunRecord, stage: str, split: str = "train") -> float:
    return [r["value"] for r in record.rows(stage) if r["metric"] == f"{split}.score"][0]


def _one_seed(args):
    config, seed, out_dir = args
    _, record = run_experiment(config, seed, out_dir)
    return record.run_id


def compare_initializations(config, seeds, out_dir="runs", threads: int = 1, task: str | None = None,
                            log=None) -> dict:
    """Final return of pre-trained versus random initialization per seed.

    Writes ``comparison.json`` and a seed-level ``comparison.csv`` into
    ``out_dir``. The direction of the difference is reported, not asserted.
    """
    cfg = load_config(config) if not isinstance(config, ExperimentConfig) else config
    if not cfg.baseline:
        cfg = replace(cfg, baseline=True)
    task = cfg.tasks[0] if task is None else task
    seeds = [int(s) for s in seeds]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, s, str(out)) for s in seeds]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            list(pool.map(_one_seed, jobs))
    else:
        for job in jobs:
            _one_seed(job)
    table = []
    for s in seeds:
        record = RunRecord.open(out, cfg.with_seed(s).snapshot())
        pre = _score(record, f"evaluate.{task}.pretrained")
        rnd = _score(record, f"evaluate.{task}.random")
        table.append({"seed": s, "run_id": record.run_id, "pretrained": pre, "random": rnd, "difference": pre - rnd})
        if log:
            log(f"seed {s}: pretrained {pre:.6g} random {rnd:.6g}")
    diffs = np.array([row["difference"] for row in table])
    n = len(diffs)
    sd = float(diffs.std(ddof=1)) if n > 1 else 0.0
    report = {
        "task": task,
        "seeds": seeds,
        "mean_pretrained": float(np.mean([r["pretrained"] for r in table])),
        "mean_random": float(np.mean([r["random"] for r in table])),
        "mean_difference": float(diffs.mean()),
        "difference_stderr": sd / math.sqrt(n) if n > 1 else None,
        "pretrained_at_least_random": bool(diffs.mean() >= 0),
        "table": table,
    }
    with open(out / "comparison.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(out / "comparison.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "run_id", "pretrained", "random", "difference"])
        for row in table:
            writer.writerow([row["seed"], row["run_id"], repr(row["pretrained"]), repr(row["random"]),
                             repr(row["difference"])])
    return report
