"""One-hot encodings of tabular states, actions and goals."""

from __future__ import annotations

import numpy as np


def onehot_concat(blocks, dtype=np.float32) -> np.ndarray:
    """Concatenate one-hot codes; ``blocks`` is a list of ``(indices, size)`` pairs."""
    n = len(blocks[0][0])
    width = sum(size for _, size in blocks)
    out = np.zeros((n, width), dtype=dtype)
    rows = np.arange(n)
    offset = 0
    for idx, size in blocks:
        out[rows, offset + np.asarray(idx)] = 1.0
        offset += size
    return out


def state_goal(s, g, n_states: int, n_goals: int, dtype=np.float32) -> np.ndarray:
    return onehot_concat([(s, n_states), (g, n_goals)], dtype)


def state_action_goal(s, a, g, n_states: int, n_actions: int, n_goals: int,
                      dtype=np.float32) -> np.ndarray:
    return onehot_concat([(s, n_states), (a, n_actions), (g, n_goals)], dtype)
