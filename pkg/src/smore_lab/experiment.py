"""Running configured experiments: environments, datasets, training cells and sweeps."""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .agents import make_agent
from .config import ConfigError, ExperimentConfig, Setting, base_label, replicate_seeds
from .data import collect_dataset
from .eval import evaluate, relative_drop
from .mdp import GoalMDP, build_chain, build_gridworld

THREADS_ENV = "SMORE_LAB_THREADS"
CACHE_VERSION = 1
METRICS = ("return", "success", "distance")


def build_env(env: dict) -> GoalMDP:
    if env["type"] == "gridworld":
        return build_gridworld(env["size"], slip=env["slip"], gamma=env["gamma"])
    if env["type"] == "chain":
        if env["slip"]:
            raise ConfigError("the chain environment has no slip parameter")
        return build_chain(env["size"], gamma=env["gamma"])
    raise ConfigError(f"unknown env type {env['type']!r}")


def make_dataset(env: dict, data: dict, seed: int):
    return collect_dataset(build_env(env), data["expert_fraction"], data["n_episodes"],
                           data["horizon"], seed=seed, epsilon=data["epsilon"])


def make_configured_agent(setting: Setting, seed: int):
    return make_agent(setting.agent_name, **setting.agent_params, seed=seed)


def worker_count(jobs: int) -> int:
    """``jobs`` capped by the thread limit in the environment, at least one."""
    cap = os.environ.get(THREADS_ENV)
    n = max(1, int(jobs))
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return n


@dataclass(frozen=True)
class Cell:
    """One training run: a setting, a replicate seed and the evaluation protocol."""

    setting: Setting
    base_seed: int
    replicate: int
    episodes: int
    horizon: int

    def key(self) -> str:
        doc = {"version": CACHE_VERSION, "env": self.setting.env, "data": self.setting.data,
               "agent": self.setting.agent, "seed": self.base_seed,
               "replicate": self.replicate, "episodes": self.episodes, "horizon": self.horizon}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:24]


def cells_for(cfg: ExperimentConfig) -> list[Cell]:
    return [Cell(setting, cfg.seed, rep, cfg.eval["episodes"], cfg.eval["horizon"])
            for setting in cfg.settings() for rep in cfg.seeds]


def run_cell(cell: Cell, cache_dir=None) -> list[dict]:
    """Train and evaluate one cell; metrics are cached by the cell key when ``cache_dir`` is set.

    Only metric values are cached, so a cell shared by sweeps with different
    axes is labelled by the sweep asking for it.
    """
    path = Path(cache_dir) / f"{cell.key()}.json" if cache_dir is not None else None
    if path is not None and path.exists():
        metrics = json.loads(path.read_text())["metrics"]
    else:
        seeds = replicate_seeds(cell.base_seed, cell.replicate)
        dataset = make_dataset(cell.setting.env, cell.setting.data, seeds["data"])
        agent = make_configured_agent(cell.setting, seeds["agent"]).fit(dataset)
        metrics = evaluate(build_env(cell.setting.env), agent, cell.episodes, cell.horizon,
                           seed=seeds["eval"])
        metrics = {m: float(metrics[m]) for m in METRICS}
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps({"metrics": metrics}))
            tmp.replace(path)
    setting = cell.setting
    return [{"env": setting.env_label, "agent": setting.agent_name, "setting": setting.label,
             "seed": cell.replicate, "metric": m, "value": metrics[m]} for m in METRICS]


def _run(args):
    return run_cell(*args)


def sort_rows(rows) -> list[dict]:
    return sorted(rows, key=lambda r: (r["env"], r["setting"], r["agent"], r["metric"],
                                       int(r["seed"])))


def run_sweep(cfg: ExperimentConfig, jobs: int = 1, cache_dir=None) -> list[dict]:
    """Every (setting, seed) cell of the config, rows in a fixed order whatever ``jobs`` is."""
    cells = cells_for(cfg)
    n = worker_count(jobs)
    if n == 1 or len(cells) == 1:
        results = [run_cell(c, cache_dir) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=min(n, len(cells))) as pool:
            results = list(pool.map(_run, [(c, cache_dir) for c in cells]))
    return sort_rows(row for rows in results for row in rows)


def perf_drop(summary, base: str, metric: str = "return") -> list[dict]:
    """Relative change of each setting's mean against its base counterpart, per env and agent.

    The counterpart shares every swept value except those named in ``base``.
    """
    means = {(r["env"], r["agent"], r["setting"]): r["mean"]
             for r in summary if r["metric"] == metric}
    out = []
    for (env, agent, setting), mean in sorted(means.items()):
        ref = base_label(setting, base)
        if ref == setting or (env, agent, ref) not in means:
            continue
        out.append({"env": env, "agent": agent, "setting": setting, "metric": metric,
                    "drop": relative_drop(mean, means[(env, agent, ref)])})
    return out


def perf_drop_table(drops) -> str:
    """Markdown table of relative drops with an average column per agent."""
    agents = sorted({d["agent"] for d in drops})
    keyed = {(d["env"], d["setting"], d["agent"]): d["drop"] for d in drops}
    lines = ["| env | setting | " + " | ".join(agents) + " |",
             "|---|---|" + "---|" * len(agents)]
    for env, setting in sorted({(d["env"], d["setting"]) for d in drops}):
        cells = [f"{100 * keyed[(env, setting, a)]:.1f}%" if (env, setting, a) in keyed else ""
                 for a in agents]
        lines.append(f"| {env} | {setting} | " + " | ".join(cells) + " |")
    avg = []
    for a in agents:
        vals = [d["drop"] for d in drops if d["agent"] == a]
        avg.append(f"{100 * sum(vals) / len(vals):.1f}%" if vals else "")
    lines.append("| avg. perf. drop | | " + " | ".join(avg) + " |")
    return "\n".join(lines) + "\n"
