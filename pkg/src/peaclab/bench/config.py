"""Experiment configuration files.

An INI file with sections ``[env]``, ``[train]``, ``[finetune]``,
``[evaluate]`` and ``[run]``. Every key is optional except ``env.family``;
unknown sections or keys are errors that name the offending line.

Example::

    [env]
    family = grid-disabled
    rows = 5
    cols = 5
    levels = 0, 1, 2, 3
    split = true

    [train]
    agent = peac
    reward = CE
    pretrain_steps = 20000

    [finetune]
    tasks = goal
    mode = init-only
    baseline = true

    [evaluate]
    episodes = 1000

    [run]
    seed = 0

Lists are comma separated; ``levels`` of ``grid-permuted`` are separated by
``;`` with each permutation written as ``0 1 2 3``. ``reward_weights``
reads ``ce = 1.0, lbs = 0.5`` style pairs separated by commas.
"""

from __future__ import annotations

import configparser
import json
import re
from dataclasses import dataclass, field, fields, replace

from ..agents.config import TrainConfig
from ..agents.peac import FINETUNE_MODES
from ..envs import FAMILIES, TASKS, EnvSpec
from ..mdp import ModelError
from ..rewards import KINDS, IntrinsicRewardSpec


class ConfigError(ValueError):
    pass


AGENTS = ("peac", "peac-diayn")

_TRAIN_TYPES = {
    "pretrain_steps": int, "finetune_steps": int, "horizon": int, "actor_lr": float, "critic_lr": float,
    "disc_lr": float, "disc_l2": float, "disc_steps": int, "disc_batch": int, "entropy": float, "gamma": float,
    "beta": float, "history": int, "buffer_size": int, "context_threshold": float, "skills": int,
    "skill_lr": float, "skill_steps": int, "skill_horizon": int, "surprise_alpha": float, "debug": bool,
}

SCHEMA = {
    "env": {"family", "rows", "cols", "layout", "levels", "prior", "start", "discount", "goal", "split"},
    "train": {"agent", "reward", "reward_weights"} | set(_TRAIN_TYPES),
    "finetune": {"tasks", "mode", "baseline"},
    "evaluate": {"episodes"},
    "run": {"seed", "name"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvSpec
    train: TrainConfig
    agent: str = "peac"
    split: bool = False
    tasks: tuple = ("goal",)
    mode: str = "init-only"
    baseline: bool = True
    episodes: int = 1000
    seed: int = 0
    name: str = "run"
    source: dict = field(default_factory=dict, compare=False)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed), train=replace(self.train, seed=int(seed)))

    def snapshot(self) -> dict:
        """Canonical, JSON-ready description (the run id hashes this)."""
        env = {f.name: getattr(self.env, f.name) for f in fields(EnvSpec)}
        env = json.loads(json.dumps(env, default=list))
        return {
            "env": env,
            "train": self.train.to_dict(),
            "agent": self.agent,
            "split": self.split,
            "tasks": list(self.tasks),
            "mode": self.mode,
            "baseline": self.baseline,
            "episodes": self.episodes,
            "seed": self.seed,
            "name": self.name,
        }


def _key_lines(text: str) -> dict:
    """Map ``(section, key)`` to its 1-based line number."""
    lines, section = {}, None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = n
            continue
        m = re.match(r"([^=:\s][^=:]*?)\s*[=:]", line)
        if m and section is not None and raw[:1] not in " \t":
            lines[(section, m.group(1).strip().lower())] = n
    return lines


class _Reader:
    def __init__(self, parser, lines, path):
        self.parser, self.lines, self.path = parser, lines, path

    def where(self, section, key=None) -> str:
        n = self.lines.get((section, key))
        return f"{self.path}:{n}" if n else str(self.path)

    def fail(self, section, key, message):
        raise ConfigError(f"{self.where(section, key)}: [{section}] {key}: {message}")

    def has(self, section, key) -> bool:
        return self.parser.has_option(section, key)

    def get(self, section, key, kind=str, default=None):
        if not self.has(section, key):
            return default
        raw = self.parser.get(section, key).strip()
        try:
            if kind is bool:
                value = self.parser.getboolean(section, key)
            elif kind is int:
                value = int(raw)
            elif kind is float:
                value = float(raw)
            else:
                value = raw
        except ValueError:
            self.fail(section, key, f"expected {kind.__name__}, got {raw!r}")
        return value

    def get_list(self, section, key, kind=str, default=None):
        if not self.has(section, key):
            return default
        raw = self.parser.get(section, key)
        items = [x.strip() for x in raw.split(",") if x.strip()]
        try:
            return tuple(kind(x) for x in items)
        except ValueError:
            self.fail(section, key, f"expected a comma-separated list of {kind.__name__}, got {raw!r}")


def _levels(reader: _Reader, family: str):
    if not reader.has("env", "levels"):
        return None
    raw = reader.parser.get("env", "levels")
    try:
        if family == "grid-permuted":
            return tuple(tuple(int(x) for x in re.split(r"[\s,]+", grp.strip()) if x)
                         for grp in raw.split(";") if grp.strip())
        if family == "grid-slip":
            return tuple(float(x) for x in re.split(r"[;,]", raw) if x.strip())
        return tuple(int(x) for x in re.split(r"[;,]", raw) if x.strip())
    except ValueError:
        reader.fail("env", "levels", f"cannot parse levels {raw!r} for family {family}")


def _reward_weights(reader: _Reader) -> dict:
    if not reader.has("train", "reward_weights"):
        return {}
    raw = reader.parser.get("train", "reward_weights")
    out = {}
    for item in raw.split(","):
        if not item.strip():
            continue
        name, sep, value = item.partition("=")
        try:
            if not sep:
                raise ValueError
            out[name.strip().lower()] = float(value)
        except ValueError:
            reader.fail("train", "reward_weights", f"expected name = number pairs, got {item.strip()!r}")
    return out


def parse_config(text: str, path: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    lines = _key_lines(text)
    reader = _Reader(parser, lines, path)
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{reader.where(section)}: unknown section [{section}]; "
                              f"expected one of {sorted(SCHEMA)}")
        for key in parser.options(section):
            if key not in SCHEMA[section]:
                reader.fail(section, key, f"unknown key; allowed keys are {sorted(SCHEMA[section])}")
    if not reader.has("env", "family"):
        raise ConfigError(f"{path}: [env] family is required")

    family = reader.get("env", "family")
    if family not in FAMILIES:
        reader.fail("env", "family", f"unknown family {family!r}; expected one of {FAMILIES}")
    env_kwargs = {"family": family}
    for key, kind in (("rows", int), ("cols", int), ("layout", str), ("start", str), ("discount", float)):
        value = reader.get("env", key, kind)
        if value is not None:
            env_kwargs[key] = value
    levels = _levels(reader, family)
    if levels is not None:
        env_kwargs["levels"] = levels
    prior = reader.get_list("env", "prior", float)
    if prior is not None:
        env_kwargs["prior"] = prior
    goal = reader.get_list("env", "goal", int)
    if goal is not None:
        if len(goal) != 2:
            reader.fail("env", "goal", "expected 'row, col'")
        env_kwargs["goal"] = goal
    env = EnvSpec(**env_kwargs)

    agent = reader.get("train", "agent", default="peac")
    if agent not in AGENTS:
        reader.fail("train", "agent", f"unknown agent {agent!r}; expected one of {AGENTS}")
    kind = reader.get("train", "reward", default="CE+DIAYN" if agent == "peac-diayn" else "CE")
    if kind not in KINDS:
        reader.fail("train", "reward", f"unknown reward {kind!r}; expected one of {sorted(KINDS)}")
    train_kwargs = {}
    for key, kind_ in _TRAIN_TYPES.items():
        value = reader.get("train", key, kind_)
        if value is not None:
            train_kwargs[key] = value
    skills = train_kwargs.get("skills", 4)
    try:
        spec = IntrinsicRewardSpec(kind, _reward_weights(reader), skills if "diayn" in KINDS[kind] else None)
    except ModelError as exc:
        reader.fail("train", "reward", str(exc))
    seed = reader.get("run", "seed", int, 0)
    try:
        train = TrainConfig(seed=seed, reward=spec, **train_kwargs)
    except ModelError as exc:
        raise ConfigError(f"{reader.where('train')}: [train] {exc}") from None

    tasks = reader.get_list("finetune", "tasks", str, ("goal",))
    for task in tasks:
        if task not in TASKS:
            reader.fail("finetune", "tasks", f"unknown task {task!r}; expected one of {TASKS}")
    mode = reader.get("finetune", "mode", default="init-only")
    if mode not in FINETUNE_MODES:
        reader.fail("finetune", "mode", f"unknown mode {mode!r}; expected one of {FINETUNE_MODES}")
    episodes = reader.get("evaluate", "episodes", int, 1000)
    if episodes < 2:
        reader.fail("evaluate", "episodes", "need at least 2 episodes")
    cfg = ExperimentConfig(
        env=env,
        train=train,
        agent=agent,
        split=reader.get("env", "split", bool, False),
        tasks=tasks,
        mode=mode,
        baseline=reader.get("finetune", "baseline", bool, True),
        episodes=episodes,
        seed=seed,
        name=reader.get("run", "name", default="run"),
        source={"path": str(path), "text": text},
    )
    _check_env(cfg, reader)
    return cfg


def _check_env(cfg: ExperimentConfig, reader: _Reader) -> None:
    from ..envs import build_env, train_test_split

    try:
        if cfg.split:
            train_test_split(cfg.env)
        else:
            build_env(cfg.env)
    except ModelError as exc:
        raise ConfigError(f"{reader.where('env')}: [env] {exc}") from None


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
