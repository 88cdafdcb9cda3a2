"""Experiment configuration: TOML files with dotted sections and list-valued sweeps.

A config looks like::

    seed = 0
    out = "runs/grid"

    [env]
    type = "gridworld"
    size = 5
    slip = [0.0, 0.2]          # a list of scalars is a sweep axis

    [data]
    expert_fraction = 0.1

    [agent]
    name = ["smore", "gcsl"]
    hidden = [64, 64]          # sequence-typed keys sweep only over lists of lists
    total_steps = 20000

    [agent.smore]
    beta = 0.5                 # applies to one agent only

    [eval]
    seeds = [0, 1, 2, 3, 4]

    [sweep]
    base = "slip=0.0"          # setting the perf-drop column is measured against

Unknown sections and keys raise :class:`ConfigError`.
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
import sys
from dataclasses import dataclass, field

import numpy as np

from ._validation import ValidationError
from .agents import AGENTS

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValidationError):
    """A config file that cannot be turned into runnable experiments."""


ENV_TYPES = ("gridworld", "chain")
DEFAULTS = {
    "env": {"type": "gridworld", "size": 5, "slip": 0.0, "gamma": 0.99},
    "data": {"expert_fraction": 0.1, "n_episodes": 1000, "horizon": 50, "epsilon": 0.1},
    "agent": {"name": "smore"},
    "eval": {"episodes": 2000, "horizon": 50, "seeds": [0, 1, 2, 3, 4]},
    "sweep": {"base": None},
}
# keys whose values are themselves sequences
SEQUENCE_KEYS = {("agent", "hidden"), ("eval", "seeds")}
NON_SWEEPABLE = {("eval", "seeds"), ("sweep", "base")}


def _agent_param_names(name: str) -> set:
    return set(AGENTS[name]().get_params()) - {"seed"}


@dataclass(frozen=True)
class Setting:
    """One point of a sweep: fully resolved sections plus the label of its swept values."""

    env: dict
    data: dict
    agent: dict
    label: str

    @property
    def agent_name(self) -> str:
        return self.agent["name"]

    @property
    def agent_params(self) -> dict:
        return {k: v for k, v in self.agent.items() if k != "name"}

    @property
    def env_label(self) -> str:
        return f"{self.env['type']}{self.env['size']}"


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs"
    env: dict = field(default_factory=lambda: dict(DEFAULTS["env"]))
    data: dict = field(default_factory=lambda: dict(DEFAULTS["data"]))
    agent: dict = field(default_factory=lambda: dict(DEFAULTS["agent"]))
    agent_overrides: dict = field(default_factory=dict)
    eval: dict = field(default_factory=lambda: dict(DEFAULTS["eval"]))
    sweep: dict = field(default_factory=lambda: dict(DEFAULTS["sweep"]))

    # ------------------------------------------------------------------
    # sweeps

    def axes(self) -> dict:
        """Swept ``(section, key) -> values``, in a fixed order."""
        out = {}
        for section in ("env", "data", "agent"):
            for key, value in getattr(self, section).items():
                if _is_sweep(section, key, value):
                    out[(section, key)] = list(value)
        for name, params in sorted(self.agent_overrides.items()):
            for key, value in params.items():
                if _is_sweep("agent", key, value):
                    out[(f"agent.{name}", key)] = list(value)
        return out

    def settings(self) -> list[Setting]:
        """Cartesian expansion of every sweep axis."""
        axes = self.axes()
        out = []
        for combo in itertools.product(*axes.values()):
            chosen = dict(zip(axes, combo))
            env, data, agent = (
                {k: chosen.get((s, k), v) for k, v in getattr(self, s).items()}
                for s in ("env", "data", "agent"))
            name = agent["name"]
            override = self.agent_overrides.get(name, {})
            agent.update({k: chosen.get((f"agent.{name}", k), v) for k, v in override.items()})
            # override axes of other agents do not multiply this agent's runs
            others = [a for a in chosen if a[0].startswith("agent.") and a[0] != f"agent.{name}"]
            if any(chosen[a] != axes[a][0] for a in others):
                continue
            label = ",".join(f"{a[1]}={_fmt(v)}" for a, v in chosen.items()
                             if a != ("agent", "name") and a not in others)
            agent = {k: tuple(v) if k == "hidden" else v for k, v in agent.items()}
            out.append(Setting(env, data, agent, label or "base"))
        return out

    @property
    def seeds(self) -> list[int]:
        return [int(s) for s in self.eval["seeds"]]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        other = copy.deepcopy(self)
        other.seed = int(seed)
        return other

    def to_dict(self) -> dict:
        agent = dict(self.agent)
        agent.update({name: dict(p) for name, p in self.agent_overrides.items()})
        out = {"seed": self.seed, "out": self.out, "env": dict(self.env), "data": dict(self.data),
               "agent": agent, "eval": dict(self.eval)}
        if self.sweep.get("base") is not None:
            out["sweep"] = dict(self.sweep)
        return out

    def fingerprint(self) -> str:
        """Hash of everything that affects results (the output directory excluded)."""
        doc = self.to_dict()
        doc.pop("out")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _is_sweep(section: str, key: str, value) -> bool:
    if not isinstance(value, list) or (section, key) in NON_SWEEPABLE:
        return False
    if (section, key) in SEQUENCE_KEYS:
        return bool(value) and all(isinstance(v, list) for v in value)
    return True


def _fmt(value) -> str:
    if isinstance(value, (list, tuple)):
        return "x".join(str(v) for v in value)
    return str(value)


# ---------------------------------------------------------------------------
# loading


def _check_keys(section: str, given: dict, allowed: set) -> None:
    unknown = sorted(set(given) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def _values(value) -> list:
    return list(value) if isinstance(value, list) else [value]


def _check_agent_params(name: str, params: dict, section: str) -> None:
    _check_keys(section, params, _agent_param_names(name))
    for combo in itertools.product(*(
            _values(v) if _is_sweep("agent", k, v) else [v] for k, v in params.items())):
        resolved = dict(zip(params, combo))
        if "hidden" in resolved:
            resolved["hidden"] = tuple(resolved["hidden"])
        try:
            AGENTS[name](**resolved)._check_params()
        except (ValidationError, TypeError) as err:
            raise ConfigError(f"[{section}] {err}") from None


def _validate(cfg: ExperimentConfig) -> None:
    for t in _values(cfg.env["type"]):
        if t not in ENV_TYPES:
            raise ConfigError(f"env.type must be one of {ENV_TYPES}, got {t!r}")
    for n in _values(cfg.env["size"]):
        if not isinstance(n, int) or n < 2:
            raise ConfigError(f"env.size must be an integer >= 2, got {n!r}")
    for p in _values(cfg.env["slip"]):
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"env.slip must lie in [0, 1], got {p}")
    for g in _values(cfg.env["gamma"]):
        if not 0.0 < g < 1.0:
            raise ConfigError(f"env.gamma must lie in (0, 1), got {g}")
    for f in _values(cfg.data["expert_fraction"]):
        if not 0.0 <= f <= 1.0:
            raise ConfigError(f"data.expert_fraction must lie in [0, 1], got {f}")
    for key in ("n_episodes", "horizon"):
        for v in _values(cfg.data[key]):
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"data.{key} must be a positive integer, got {v!r}")
    for key in ("episodes", "horizon"):
        if not isinstance(cfg.eval[key], int) or cfg.eval[key] < 1:
            raise ConfigError(f"eval.{key} must be a positive integer")
    seeds = cfg.eval["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("eval.seeds must be a nonempty list of integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("eval.seeds contains duplicates")

    names = _values(cfg.agent["name"])
    for name in names:
        if name not in AGENTS:
            raise ConfigError(f"unknown agent {name!r}; choose from {sorted(AGENTS)}")
    shared = {k: v for k, v in cfg.agent.items() if k != "name"}
    for name in names:
        _check_agent_params(name, shared, "agent")
    for name, params in cfg.agent_overrides.items():
        if name not in names:
            raise ConfigError(f"[agent.{name}] configures an agent that is not run")
        _check_agent_params(name, {**shared, **params}, f"agent.{name}")

    base = cfg.sweep.get("base")
    if base is not None:
        try:
            wanted = parse_label(base)
        except ValueError:
            raise ConfigError(f"sweep.base {base!r} is not of the form key=value[,key=value]") \
                from None
        labels = [parse_label(s.label) for s in cfg.settings()]
        if not any(all(lab.get(k) == v for k, v in wanted.items()) for lab in labels):
            raise ConfigError(f"sweep.base {base!r} does not match any setting of this sweep")


def config_from_dict(doc: dict) -> ExperimentConfig:
    doc = copy.deepcopy(doc)
    _check_keys("top level", doc, {"seed", "out", *DEFAULTS})
    cfg = ExperimentConfig()
    if "seed" in doc:
        if not isinstance(doc["seed"], int):
            raise ConfigError("seed must be an integer")
        cfg.seed = doc["seed"]
    if "out" in doc:
        cfg.out = str(doc["out"])
    for section in DEFAULTS:
        given = doc.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{section}] must be a table")
        if section == "agent":
            cfg.agent_overrides = {k: v for k, v in given.items() if isinstance(v, dict)}
            given = {k: v for k, v in given.items() if not isinstance(v, dict)}
            target = {"name": DEFAULTS["agent"]["name"], **given}
        else:
            _check_keys(section, given, set(DEFAULTS[section]))
            target = {**DEFAULTS[section], **given}
        setattr(cfg, section, target)
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from None
    return config_from_dict(doc)


def parse_label(label: str) -> dict:
    """``"slip=0.2,beta=0.5"`` to ``{"slip": "0.2", "beta": "0.5"}``; ``"base"`` is empty."""
    if label == "base":
        return {}
    return dict(part.split("=", 1) for part in label.split(","))


def base_label(label: str, base: str) -> str:
    """The setting ``label`` with the swept values named in ``base`` substituted."""
    parts = parse_label(label)
    for key, value in parse_label(base).items():
        if key in parts:
            parts[key] = value
    return ",".join(f"{k}={v}" for k, v in parts.items()) or "base"


def replicate_seeds(base_seed: int, replicate: int) -> dict:
    """Independent integer seeds for the dataset, the agent and the evaluation rollouts."""
    children = np.random.SeedSequence([int(base_seed), int(replicate)]).spawn(3)
    return {name: int(child.generate_state(1)[0])
            for name, child in zip(("data", "agent", "eval"), children)}
