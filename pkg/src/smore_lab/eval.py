"""Policy evaluation: rollout metrics, multi-seed reports, significance tests, tables."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path
from scipy.stats import mannwhitneyu

from ._validation import ValidationError, rng_from
from .mdp import GoalMDP, check_policy

EXACT_U_LIMIT = 400
SIGNIFICANCE = 0.05
CSV_FIELDS = ("env", "agent", "setting", "seed", "metric", "value")


def as_policy_table(mdp: GoalMDP, agent) -> np.ndarray:
    """Greedy ``[G, S, A]`` table for an agent, or validate a table passed directly."""
    if hasattr(agent, "policy_table"):
        return check_policy(mdp, agent.policy_table(greedy=True))
    return check_policy(mdp, agent)


@dataclass(frozen=True)
class Rollouts:
    goals: np.ndarray
    final_states: np.ndarray
    returns: np.ndarray


def run_rollouts(mdp: GoalMDP, agent, n_episodes: int, horizon: int, gamma: float | None = None,
                 seed=None) -> Rollouts:
    """Vectorized episodes from ``d0`` with goals from ``q_test``.

    The return counts ``gamma^t`` whenever the state reached after step ``t``
    achieves the goal. Stochastic tables are sampled; agents act greedily.
    """
    if n_episodes < 1 or horizon < 0:
        raise ValidationError("need n_episodes >= 1 and horizon >= 0")
    gamma = mdp.gamma if gamma is None else float(gamma)
    pi = as_policy_table(mdp, agent)
    rng = rng_from(seed)
    goals = rng.choice(mdp.n_goals, size=n_episodes, p=mdp.q_test)
    states = rng.choice(mdp.n_states, size=n_episodes, p=mdp.initial)
    cdf_pi = np.cumsum(pi, axis=2)
    cdf_p = np.cumsum(mdp.transition, axis=2)
    returns = np.zeros(n_episodes)
    discount = 1.0
    for _ in range(horizon):
        u = rng.random(n_episodes)[:, None]
        actions = np.minimum((u > cdf_pi[goals, states]).sum(axis=1), mdp.n_actions - 1)
        u = rng.random(n_episodes)[:, None]
        states = np.minimum((u > cdf_p[states, actions]).sum(axis=1), mdp.n_states - 1)
        returns += discount * (mdp.phi[states] == goals)
        discount *= gamma
    return Rollouts(goals, states, returns)


def rollout_return(mdp: GoalMDP, agent, n_episodes: int, horizon: int, gamma: float | None = None,
                   seed=None) -> float:
    return float(run_rollouts(mdp, agent, n_episodes, horizon, gamma, seed).returns.mean())


def success_rate(mdp: GoalMDP, agent, n_episodes: int, horizon: int, seed=None) -> float:
    """Fraction of episodes whose final state achieves the goal."""
    r = run_rollouts(mdp, agent, n_episodes, horizon, seed=seed)
    return float(np.mean(mdp.phi[r.final_states] == r.goals))


def goal_distances(mdp: GoalMDP) -> np.ndarray:
    """``[S, G]`` fewest steps from each state to any state achieving each goal."""
    support = csr_matrix(mdp.transition.max(axis=1) > 0)
    steps = shortest_path(support, unweighted=True)
    out = np.full((mdp.n_states, mdp.n_goals), np.inf)
    for g in range(mdp.n_goals):
        members = np.flatnonzero(mdp.phi == g)
        if members.size:
            out[:, g] = steps[:, members].min(axis=1)
    return out


def final_distance(mdp: GoalMDP, agent, n_episodes: int, horizon: int, seed=None) -> float:
    """Mean shortest-path distance from the final state to the goal."""
    r = run_rollouts(mdp, agent, n_episodes, horizon, seed=seed)
    return float(goal_distances(mdp)[r.final_states, r.goals].mean())


def evaluate(mdp: GoalMDP, agent, n_episodes: int, horizon: int, gamma: float | None = None,
             seed=None) -> dict:
    """All three metrics from one shared set of rollouts."""
    r = run_rollouts(mdp, agent, n_episodes, horizon, gamma, seed)
    return {"return": float(r.returns.mean()),
            "success": float(np.mean(mdp.phi[r.final_states] == r.goals)),
            "distance": float(goal_distances(mdp)[r.final_states, r.goals].mean())}


# ---------------------------------------------------------------------------
# reports and statistics


@dataclass
class EvalReport:
    """Per-seed metric vectors for one (env, agent, setting) cell."""

    metrics: dict = field(default_factory=dict)
    n_episodes: int = 0
    horizon: int = 0
    gamma: float = 0.99

    def __post_init__(self):
        lengths = {len(v) for v in self.metrics.values()}
        if len(lengths) > 1:
            raise ValidationError(f"metric vectors have different lengths {sorted(lengths)}")
        self.metrics = {k: np.asarray(v, dtype=float) for k, v in self.metrics.items()}

    def mean(self, metric: str) -> float:
        return float(self.metrics[metric].mean())

    def std(self, metric: str) -> float:
        return float(self.metrics[metric].std())


def mann_whitney_u(samples_a, samples_b) -> float:
    """Two-sided p-value; exact when ``n_a * n_b <= 400`` without ties, else the
    tie-corrected normal approximation with continuity correction."""
    a = np.asarray(samples_a, dtype=float).ravel()
    b = np.asarray(samples_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValidationError("Mann-Whitney U needs two nonempty samples")
    pooled = np.concatenate([a, b])
    if np.all(pooled == pooled[0]):
        return 1.0
    ties = np.unique(pooled).size < pooled.size
    method = "exact" if a.size * b.size <= EXACT_U_LIMIT and not ties else "asymptotic"
    return float(mannwhitneyu(a, b, alternative="two-sided", method=method).pvalue)


def relative_drop(mean_setting: float, mean_base: float) -> float:
    """``(mean_setting - mean_base) / mean_base``."""
    if mean_base == 0:
        raise ValidationError("relative drop is undefined for a zero baseline mean")
    return (mean_setting - mean_base) / mean_base


def aggregate(rows) -> list[dict]:
    """Summarize long-format rows into mean, std and significance per cell.

    ``rows`` are mappings with the :data:`CSV_FIELDS` keys. For each
    ``(env, setting, metric)`` the best agent by mean is starred when its
    per-seed values differ from the second best at ``p < 0.05``.
    """
    cells = defaultdict(list)
    for row in rows:
        cells[(row["env"], row["setting"], row["metric"], row["agent"])].append(float(row["value"]))
    groups = defaultdict(dict)
    for (env, setting, metric, agent), values in cells.items():
        groups[(env, setting, metric)][agent] = np.asarray(values)
    out = []
    for (env, setting, metric), by_agent in sorted(groups.items()):
        ranked = sorted(by_agent, key=lambda k: (-by_agent[k].mean(), k))
        lower_is_better = metric == "distance"
        if lower_is_better:
            ranked = ranked[::-1]
        best = ranked[0]
        p_value = (mann_whitney_u(by_agent[best], by_agent[ranked[1]])
                   if len(ranked) > 1 else float("nan"))
        for agent in sorted(by_agent):
            values = by_agent[agent]
            out.append({"env": env, "setting": setting, "metric": metric, "agent": agent,
                        "mean": float(values.mean()), "std": float(values.std()),
                        "n": int(values.size),
                        "star": bool(agent == best and p_value < SIGNIFICANCE),
                        "p_vs_second": p_value if agent == best else float("nan")})
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def write_rows_csv(rows, path=None) -> str:
    """RFC-4180 CSV in the long ``env, agent, setting, seed, metric, value`` layout."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(CSV_FIELDS)
    for row in rows:
        writer.writerow([row["env"], row["agent"], row["setting"], int(row["seed"]),
                         row["metric"], _fmt(row["value"])])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def write_summary_csv(summary, path=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    keys = ("env", "setting", "metric", "agent", "mean", "std", "n", "star", "p_vs_second")
    writer.writerow(keys)
    for row in summary:
        writer.writerow([_fmt(row[k]) if isinstance(row[k], float) else row[k] for k in keys])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def markdown_table(summary, metric: str = "return") -> str:
    """Environments and settings as rows, agents as columns, ``mean ± std`` cells."""
    chosen = [r for r in summary if r["metric"] == metric]
    agents = sorted({r["agent"] for r in chosen})
    lines = ["| env | setting | " + " | ".join(agents) + " |",
             "|---|---|" + "---|" * len(agents)]
    keyed = {(r["env"], r["setting"], r["agent"]): r for r in chosen}
    for env, setting in sorted({(r["env"], r["setting"]) for r in chosen}):
        cells = []
        for agent in agents:
            r = keyed.get((env, setting, agent))
            if r is None:
                cells.append("")
                continue
            text = f"{r['mean']:.2f} ± {r['std']:.2f}"
            cells.append(f"**{text}**\\*" if r["star"] else text)
        lines.append(f"| {env} | {setting} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
