"""Tiny MDPs whose goal-transition distribution is exactly achievable.

Recipe: a deterministic MDP with a single weighted goal state ``G`` that has
a self-loop, where each of ``m`` predecessor states has exactly one action
entering ``G`` and no other state-action pair does. With ``gamma = 1/(m+1)``
and ``d0`` uniform on the predecessors, the policy "enter G, then stay" has
occupancy equal to ``q``, so the mixture-matching optimum is zero for every
``beta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import ValidationError
from .mdp import GoalMDP


@dataclass(frozen=True)
class Instance:
    name: str
    mdp: GoalMDP
    rho: np.ndarray


def dataset_like_rho(mdp: GoalMDP, seed: int = 0) -> np.ndarray:
    """Dirichlet-random joint restricted to goals with training weight."""
    rng = np.random.default_rng(seed)
    rho = rng.dirichlet(np.ones(mdp.n_states * mdp.n_actions * mdp.n_goals))
    rho = rho.reshape(mdp.n_states, mdp.n_actions, mdp.n_goals) * (mdp.q_train > 0)
    return rho / rho.sum()


def achievable_instance(next_state: list[list[int]], goal: int, name: str) -> GoalMDP:
    """Build the recipe above from a deterministic successor table ``next_state[s][a]``."""
    nxt = np.asarray(next_state, dtype=int)
    n_states, n_actions = nxt.shape
    entering = np.argwhere(nxt == goal)
    preds = [int(s) for s, _ in entering if s != goal]
    if goal not in entering[:, 0] or len(set(preds)) != len(preds) or not preds:
        raise ValidationError("goal needs a self-loop and one entering action per predecessor")
    transition = np.zeros((n_states, n_actions, n_states))
    s_idx, a_idx = np.indices(nxt.shape)
    transition[s_idx, a_idx, nxt] = 1.0
    initial = np.zeros(n_states)
    initial[preds] = 1.0 / len(preds)
    weights = np.eye(n_states)[goal]
    return GoalMDP(transition=transition, initial=initial, phi=np.arange(n_states),
                   gamma=1.0 / (len(preds) + 1), q_train=weights, q_test=weights,
                   descriptor={"type": "achievable", "name": name})


CATALOGUE = {
    # 0 <-> 1 chain, goal 1
    "chain2": ([[0, 1], [0, 1]], 1),
    # 3-chain, left/right, goal at the right end
    "chain3": ([[0, 1], [0, 2], [1, 2]], 2),
    # 5-ring with actions (clockwise, counter-clockwise, stay), goal 0
    "ring5": ([[(s + 1) % 5, (s - 1) % 5, s] for s in range(5)], 0),
    # three feeder states 2..4 jump to goal 5 with action 0
    "funnel6": ([[1, 2, 0], [2, 3, 0], [5, 3, 1], [5, 4, 2], [5, 2, 3], [5, 0, 1]], 5),
    # star graph with an absorbing hub goal 0 reachable from leaves 1..3 via action 2
    "hub4": ([[0, 1, 2], [2, 3, 0], [3, 1, 0], [1, 2, 0]], 0),
}


def certified_instances(seed: int = 0) -> list[Instance]:
    """The five catalogue instances paired with a Dirichlet dataset joint."""
    out = []
    for name, (table, goal) in CATALOGUE.items():
        mdp = achievable_instance(table, goal, name)
        out.append(Instance(name, mdp, dataset_like_rho(mdp, seed)))
    return out
