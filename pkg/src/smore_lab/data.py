"""Offline datasets: collection, hindsight relabeling, goal-transition sampling, file I/O."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import ValidationError, check_unit_interval, rng_from
from .mdp import GoalMDP, expert_policy, sample_next_states

DATASET_FORMAT = "smore-lab-dataset"
DATASET_VERSION = 1
FIELDS = ("episode_id", "t", "s", "a", "s_next", "achieved_goal", "commanded_goal")
RECORD_DTYPE = np.dtype([(name, "<i4") for name in FIELDS])
EXPERT_EPSILON = 0.1


@dataclass(frozen=True, eq=False)
class OfflineDataset:
    """Transitions stored column-wise; episodes are contiguous and ordered by ``t``."""

    records: np.ndarray
    n_states: int
    n_actions: int
    n_goals: int
    env: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        rec = np.array(self.records, dtype=RECORD_DTYPE, copy=True)
        rec.setflags(write=False)
        object.__setattr__(self, "records", rec)
        if len(rec) == 0:
            object.__setattr__(self, "_episode_end", np.zeros(0, dtype=np.int64))
            return
        for name, bound in (("s", self.n_states), ("s_next", self.n_states),
                            ("a", self.n_actions), ("achieved_goal", self.n_goals),
                            ("commanded_goal", self.n_goals)):
            col = rec[name]
            if col.min() < 0 or col.max() >= bound:
                raise ValidationError(f"column {name} has indices outside [0, {bound})")
        starts = np.flatnonzero(np.r_[True, rec["episode_id"][1:] != rec["episode_id"][:-1]])
        if len(np.unique(rec["episode_id"])) != len(starts):
            raise ValidationError("episodes must be stored contiguously")
        lengths = np.diff(np.r_[starts, len(rec)])
        expected_t = np.arange(len(rec)) - np.repeat(starts, lengths)
        if not np.array_equal(rec["t"], expected_t):
            raise ValidationError("step indices must run 0, 1, 2, ... within each episode")
        ends = np.repeat(starts + lengths - 1, lengths)
        object.__setattr__(self, "_episode_end", ends)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.records[name]

    @property
    def episode_end(self) -> np.ndarray:
        """Index of the last transition of each transition's episode."""
        return self._episode_end

    @property
    def n_episodes(self) -> int:
        return int(len(np.unique(self.records["episode_id"])))

    def episode_lengths(self) -> np.ndarray:
        _, counts = np.unique(self.records["episode_id"], return_counts=True)
        return counts

    def __eq__(self, other) -> bool:
        return (isinstance(other, OfflineDataset)
                and np.array_equal(self.records, other.records)
                and (self.n_states, self.n_actions, self.n_goals)
                == (other.n_states, other.n_actions, other.n_goals)
                and self.env == other.env and self.provenance == other.provenance)


def n_expert_episodes(expert_fraction: float, n_episodes: int) -> int:
    # round first so 0.1 * 100 does not become 11 through float noise
    return int(math.ceil(round(expert_fraction * n_episodes, 9)))


def collect_dataset(mdp: GoalMDP, expert_fraction: float, n_episodes: int, horizon: int,
                    seed=None, epsilon: float = EXPERT_EPSILON) -> OfflineDataset:
    """Roll out an epsilon-greedy expert and a uniform-random policy.

    Expert episodes command a goal drawn from ``q_test``; random episodes
    command a goal drawn from ``q_train``. Every episode starts from ``d0``
    and lasts exactly ``horizon`` steps.
    """
    check_unit_interval(expert_fraction, "expert_fraction")
    check_unit_interval(epsilon, "epsilon")
    if n_episodes < 0 or horizon < 1:
        raise ValidationError("need n_episodes >= 0 and horizon >= 1")
    rng = rng_from(seed)
    n_expert = n_expert_episodes(expert_fraction, n_episodes)
    expert = expert_policy(mdp).argmax(axis=2) if n_expert else None

    is_expert = np.arange(n_episodes) < n_expert
    goals = np.where(is_expert,
                     rng.choice(mdp.n_goals, size=n_episodes, p=mdp.q_test),
                     rng.choice(mdp.n_goals, size=n_episodes, p=mdp.q_train))
    states = rng.choice(mdp.n_states, size=n_episodes, p=mdp.initial)
    out = np.zeros((n_episodes, horizon), dtype=RECORD_DTYPE)
    for t in range(horizon):
        actions = rng.integers(mdp.n_actions, size=n_episodes)
        if expert is not None:
            greedy = rng.random(n_episodes) >= epsilon
            use = is_expert & greedy
            actions = np.where(use, expert[goals, states], actions)
        nxt = sample_next_states(mdp, states, actions, rng)
        row = out[:, t]
        row["episode_id"] = np.arange(n_episodes)
        row["t"] = t
        row["s"], row["a"], row["s_next"] = states, actions, nxt
        row["achieved_goal"] = mdp.phi[nxt]
        row["commanded_goal"] = goals
        states = nxt
    provenance = {"expert_fraction": float(expert_fraction), "n_expert_episodes": n_expert,
                  "n_episodes": int(n_episodes), "horizon": int(horizon),
                  "epsilon": float(epsilon), "seed": None if seed is None else int(seed)}
    return OfflineDataset(out.reshape(-1), mdp.n_states, mdp.n_actions, mdp.n_goals,
                          env=dict(mdp.descriptor), provenance=provenance)


# ---------------------------------------------------------------------------
# relabeling and sampling


@dataclass(frozen=True)
class GoalBatch:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    g: np.ndarray
    relabeled: np.ndarray
    index: np.ndarray


def _future_index(dataset: OfflineDataset, idx: np.ndarray, rng) -> np.ndarray:
    """Uniform draw from ``idx .. episode_end`` (the current step included)."""
    span = dataset.episode_end[idx] - idx + 1
    return idx + np.floor(rng.random(len(idx)) * span).astype(np.int64)


def her_relabel(dataset: OfflineDataset, batch_indices, her_ratio: float, rng=None) -> GoalBatch:
    """Replace the commanded goal by a future achieved goal with probability ``her_ratio``."""
    check_unit_interval(her_ratio, "her_ratio")
    rng = rng_from(rng)
    idx = np.asarray(batch_indices, dtype=np.int64)
    rec = dataset.records
    relabel = rng.random(len(idx)) < her_ratio
    future = _future_index(dataset, idx, rng)
    g = np.where(relabel, rec["achieved_goal"][future], rec["commanded_goal"][idx])
    return GoalBatch(rec["s"][idx], rec["a"][idx], rec["s_next"][idx], g, relabel, idx)


def sample_transitions(dataset: OfflineDataset, her_ratio: float, batch_size: int,
                       rng=None) -> GoalBatch:
    """Uniform transitions with HER goals: a draw from the dataset joint ``rho``."""
    if len(dataset) == 0:
        raise ValidationError("dataset is empty")
    rng = rng_from(rng)
    return her_relabel(dataset, rng.integers(len(dataset), size=batch_size), her_ratio, rng)


def _commanded_hits(dataset: OfflineDataset) -> np.ndarray:
    """For each step, the first step at or after it (same episode) entering the commanded goal."""
    cached = getattr(dataset, "_hits", None)
    if cached is None:
        rec = dataset.records
        n = len(rec)
        hit = np.where(rec["achieved_goal"] == rec["commanded_goal"], np.arange(n), n)
        cached = np.minimum.accumulate(hit[::-1])[::-1]
        cached = np.where(cached <= dataset.episode_end, cached, -1)
        object.__setattr__(dataset, "_hits", cached)
    return cached


def sample_goal_transition(dataset: OfflineDataset, her_ratio: float, batch_size: int,
                           rng=None) -> GoalBatch:
    """Draw ``(s, a, g)`` from the goal-transition distribution.

    A goal is chosen by the HER rule from a uniformly drawn step; the
    returned transition is the one whose next state achieves that goal. For a
    relabeled goal this is the sampled future step itself. For a kept
    commanded goal it is the first later step entering the goal; when the
    episode never reaches it, the draw falls back to a future achieved goal.
    """
    if len(dataset) == 0:
        raise ValidationError("dataset is empty")
    check_unit_interval(her_ratio, "her_ratio")
    rng = rng_from(rng)
    rec = dataset.records
    idx = rng.integers(len(dataset), size=batch_size)
    relabel = rng.random(batch_size) < her_ratio
    chosen = _future_index(dataset, idx, rng)
    keep = np.flatnonzero(~relabel)
    if keep.size:
        entry = _commanded_hits(dataset)[idx[keep]]
        found = entry >= 0
        chosen[keep[found]] = entry[found]
        relabel[keep[~found]] = True
    return GoalBatch(rec["s"][chosen], rec["a"][chosen], rec["s_next"][chosen],
                     rec["achieved_goal"][chosen], relabel, chosen)


def empirical_joint(dataset: OfflineDataset, her_ratio: float, n_samples: int,
                    seed=None) -> np.ndarray:
    """Monte-Carlo estimate of ``rho(s, a, g)`` under HER relabeling."""
    batch = sample_transitions(dataset, her_ratio, n_samples, rng_from(seed))
    counts = np.zeros((dataset.n_states, dataset.n_actions, dataset.n_goals))
    np.add.at(counts, (batch.s, batch.a, batch.g), 1.0)
    return counts / counts.sum()


# ---------------------------------------------------------------------------
# file I/O


def save_dataset(dataset: OfflineDataset, path) -> None:
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "fields": list(FIELDS),
        "n_transitions": len(dataset),
        "n_states": dataset.n_states,
        "n_actions": dataset.n_actions,
        "n_goals": dataset.n_goals,
        "env": dataset.env,
        "provenance": dataset.provenance,
    }
    blob = json.dumps(header, sort_keys=True).encode() + b"\n"
    Path(path).write_bytes(blob + np.ascontiguousarray(dataset.records).tobytes())


def load_dataset(path) -> OfflineDataset:
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ValidationError(f"{path}: missing dataset header")
    try:
        header = json.loads(raw[:newline])
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed dataset header ({exc})") from None
    if header.get("format") != DATASET_FORMAT:
        raise ValidationError(f"{path}: not a dataset file")
    if header.get("version") != DATASET_VERSION:
        raise ValidationError(f"{path}: dataset version {header.get('version')} unsupported "
                              f"(expected {DATASET_VERSION})")
    body = raw[newline + 1:]
    expected = header["n_transitions"] * RECORD_DTYPE.itemsize
    if len(body) != expected:
        where = newline + 1 + min(len(body), expected)
        kind = "truncated" if len(body) < expected else "has trailing bytes"
        raise ValidationError(f"{path}: file {kind} at byte offset {where} "
                              f"(expected {newline + 1 + expected} bytes in total)")
    records = np.frombuffer(body, dtype=RECORD_DTYPE).copy()
    return OfflineDataset(records, header["n_states"], header["n_actions"], header["n_goals"],
                          env=header.get("env", {}), provenance=header.get("provenance", {}))


def export_csv(dataset: OfflineDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FIELDS)
        for row in dataset.records.tolist():
            writer.writerow(row)
