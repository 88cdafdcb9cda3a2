"""Finite goal-conditioned MDPs and exact occupancy / return computation.

Tensors follow a fixed axis convention throughout the package:

* ``transition[s, a, s']`` -- next-state probabilities
* ``policy[g, s, a]``      -- goal-conditioned action probabilities
* ``d[s, a, g]``           -- joint state-action-goal occupancy (sums to 1)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ._validation import (
    ValidationError,
    as_float_array,
    check_distribution,
    check_index,
    rng_from,
)

# gridworld action order; "stay" first so greedy ties resolve to staying put
STAY, UP, DOWN, LEFT, RIGHT = range(5)
GRID_MOVES = {STAY: (0, 0), UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}
CHAIN_LEFT, CHAIN_RIGHT = 0, 1


@dataclass(frozen=True, eq=False)
class GoalMDP:
    """A finite goal-conditioned MDP with a state-to-goal map ``phi``."""

    transition: np.ndarray
    initial: np.ndarray
    phi: np.ndarray
    gamma: float
    q_train: np.ndarray
    q_test: np.ndarray
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        p = as_float_array(self.transition, "transition", ndim=3)
        if p.shape[0] != p.shape[2]:
            raise ValidationError(f"transition must be [S, A, S], got {p.shape}")
        check_distribution(p, "transition rows", axis=2)
        n_states = p.shape[0]
        d0 = check_distribution(self.initial, "initial")
        if d0.shape != (n_states,):
            raise ValidationError(f"initial must have shape ({n_states},)")
        phi = np.asarray(self.phi)
        if phi.shape != (n_states,) or not np.issubdtype(phi.dtype, np.integer):
            raise ValidationError("phi must be an integer vector with one entry per state")
        q_train = check_distribution(self.q_train, "q_train")
        q_test = check_distribution(self.q_test, "q_test")
        if q_train.shape != q_test.shape or q_train.ndim != 1:
            raise ValidationError("q_train and q_test must be vectors over the same goal set")
        if phi.min() < 0 or phi.max() >= q_train.shape[0]:
            raise ValidationError("phi maps a state outside the goal set")
        if not 0.0 < float(self.gamma) < 1.0:
            raise ValidationError(f"gamma={self.gamma} must lie strictly inside (0, 1)")
        for name, value in (("transition", p), ("initial", d0), ("q_train", q_train),
                            ("q_test", q_test)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        phi = phi.astype(np.int64)
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_goals(self) -> int:
        return self.q_train.shape[0]

    def with_weights(self, **changes) -> "GoalMDP":
        """Copy with some fields replaced (e.g. ``gamma`` or ``q_train``)."""
        fields = dict(transition=self.transition, initial=self.initial, phi=self.phi,
                      gamma=self.gamma, q_train=self.q_train, q_test=self.q_test,
                      descriptor=dict(self.descriptor))
        fields.update(changes)
        return GoalMDP(**fields)

    def to_json(self) -> str:
        doc = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "n_goals": self.n_goals,
            "transition": self.transition.ravel().tolist(),
            "initial": self.initial.tolist(),
            "phi": self.phi.tolist(),
            "gamma": self.gamma,
            "q_train": self.q_train.tolist(),
            "q_test": self.q_test.tolist(),
            "descriptor": self.descriptor,
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "GoalMDP":
        doc = json.loads(text)
        shape = (doc["n_states"], doc["n_actions"], doc["n_states"])
        return cls(
            transition=np.asarray(doc["transition"], dtype=np.float64).reshape(shape),
            initial=np.asarray(doc["initial"], dtype=np.float64),
            phi=np.asarray(doc["phi"], dtype=np.int64),
            gamma=doc["gamma"],
            q_train=np.asarray(doc["q_train"], dtype=np.float64),
            q_test=np.asarray(doc["q_test"], dtype=np.float64),
            descriptor=doc.get("descriptor", {}),
        )


# ---------------------------------------------------------------------------
# builders


def grid_cell(n: int, state: int) -> tuple[int, int]:
    return divmod(int(state), n)


def build_gridworld(n: int, slip: float = 0.0, gamma: float = 0.99, test_goals=None,
                    initial=None) -> GoalMDP:
    """Square ``n x n`` grid with moves up/down/left/right and a stay action.

    With probability ``slip`` the executed move is replaced by one of the
    four moves drawn uniformly at random (this applies to "stay" as well).
    Moves into a wall leave the agent in place. Goals are cells; training
    goals are uniform over all cells and test goals default to the corners.
    """
    if int(n) != n or n < 2:
        raise ValidationError(f"gridworld side length must be an integer >= 2, got {n}")
    if not 0.0 <= slip < 1.0:
        raise ValidationError(f"slip={slip} must lie in [0, 1)")
    n = int(n)
    n_states = n * n

    def target(state, action):
        r, c = divmod(state, n)
        dr, dc = GRID_MOVES[action]
        r2, c2 = r + dr, c + dc
        if not (0 <= r2 < n and 0 <= c2 < n):
            return state
        return r2 * n + c2

    p = np.zeros((n_states, 5, n_states))
    for s in range(n_states):
        for a in GRID_MOVES:
            p[s, a, target(s, a)] += 1.0 - slip
            for m in (UP, DOWN, LEFT, RIGHT):
                p[s, a, target(s, m)] += slip / 4.0

    if test_goals is None:
        test_goals = [0, n - 1, n * (n - 1), n * n - 1]
    q_test = np.zeros(n_states)
    q_test[list(test_goals)] = 1.0
    q_test /= q_test.sum()
    d0 = np.full(n_states, 1.0 / n_states) if initial is None else np.asarray(initial, float)
    return GoalMDP(
        transition=p,
        initial=d0,
        phi=np.arange(n_states),
        gamma=gamma,
        q_train=np.full(n_states, 1.0 / n_states),
        q_test=q_test,
        descriptor={"type": "gridworld", "size": n, "slip": float(slip), "gamma": gamma,
                    "test_goals": [int(g) for g in test_goals]},
    )


def build_chain(n: int, gamma: float = 0.99, q_train=None, q_test=None, initial=None) -> GoalMDP:
    """States ``0..n-1`` with actions left/right; both ends self-loop."""
    if int(n) != n or n < 2:
        raise ValidationError(f"chain length must be an integer >= 2, got {n}")
    n = int(n)
    p = np.zeros((n, 2, n))
    for s in range(n):
        p[s, CHAIN_LEFT, max(s - 1, 0)] = 1.0
        p[s, CHAIN_RIGHT, min(s + 1, n - 1)] = 1.0
    d0 = np.eye(n)[0] if initial is None else np.asarray(initial, dtype=float)
    q_train = np.full(n, 1.0 / n) if q_train is None else np.asarray(q_train, dtype=float)
    q_test = np.eye(n)[n - 1] if q_test is None else np.asarray(q_test, dtype=float)
    return GoalMDP(transition=p, initial=d0, phi=np.arange(n), gamma=gamma,
                   q_train=q_train, q_test=q_test,
                   descriptor={"type": "chain", "size": n, "gamma": gamma})


def random_mdp(n_states: int, n_actions: int, n_goals: int, gamma: float = 0.9,
               seed=None, branching: int | None = None) -> GoalMDP:
    """Garnet-style random MDP; ``phi`` assigns states to goals round-robin."""
    if n_goals > n_states:
        raise ValidationError("n_goals cannot exceed n_states")
    rng = rng_from(seed)
    b = n_states if branching is None else branching
    p = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            nxt = rng.choice(n_states, size=b, replace=False)
            p[s, a, nxt] = rng.dirichlet(np.ones(b))
    phi = np.arange(n_states) % n_goals
    return GoalMDP(transition=p, initial=rng.dirichlet(np.ones(n_states)), phi=phi,
                   gamma=gamma, q_train=rng.dirichlet(np.ones(n_goals)),
                   q_test=rng.dirichlet(np.ones(n_goals)),
                   descriptor={"type": "random", "seed": None if seed is None else str(seed)})


def random_policy(mdp: GoalMDP, seed=None, concentration: float = 1.0) -> np.ndarray:
    rng = rng_from(seed)
    return rng.dirichlet(np.full(mdp.n_actions, concentration),
                         size=(mdp.n_goals, mdp.n_states))


def uniform_policy(mdp: GoalMDP) -> np.ndarray:
    return np.full((mdp.n_goals, mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


def deterministic_policy(mdp: GoalMDP, actions) -> np.ndarray:
    """One-hot policy from an integer array ``actions[g, s]``."""
    actions = np.asarray(actions)
    pi = np.zeros((mdp.n_goals, mdp.n_states, mdp.n_actions))
    g_idx, s_idx = np.indices(actions.shape)
    pi[g_idx, s_idx, actions] = 1.0
    return pi


def check_policy(mdp: GoalMDP, policy) -> np.ndarray:
    pi = as_float_array(policy, "policy", ndim=3)
    expected = (mdp.n_goals, mdp.n_states, mdp.n_actions)
    if pi.shape != expected:
        raise ValidationError(f"policy shape {pi.shape} does not match {expected}")
    return check_distribution(pi, "policy rows", axis=2)


# ---------------------------------------------------------------------------
# rewards and goal-transition distributions


def goal_entry_probability(mdp: GoalMDP) -> np.ndarray:
    """``E_{s'~p(.|s,a)}[1(phi(s') = g)]`` as an ``[S, A, G]`` tensor."""
    onehot = np.eye(mdp.n_goals)[mdp.phi]
    return mdp.transition @ onehot


def reward_tensor(mdp: GoalMDP) -> np.ndarray:
    """Sparse reward ``r(s, a, g)``; zero for goals outside the training support."""
    return goal_entry_probability(mdp) * (mdp.q_train > 0)[None, None, :]


def sparse_reward(mdp: GoalMDP, s: int, a: int, g: int) -> float:
    s = check_index(s, mdp.n_states, "s")
    a = check_index(a, mdp.n_actions, "a")
    g = check_index(g, mdp.n_goals, "g")
    if mdp.q_train[g] <= 0:
        return 0.0
    return float(mdp.transition[s, a, mdp.phi == g].sum())


def goal_transition_distribution(mdp: GoalMDP) -> np.ndarray:
    """Hard goal-transition distribution ``q(s,a,g) ~ q_train(g) r(s,a,g)``."""
    q = mdp.q_train[None, None, :] * reward_tensor(mdp)
    total = q.sum()
    if total <= 0:
        raise ValidationError("no goal-entering transitions")
    return q / total


def soft_goal_transition_distribution(mdp: GoalMDP, alpha: float) -> tuple[np.ndarray, float]:
    """Soft version ``q ~ exp(alpha r)`` over all of S x A x G.

    Returns ``(q, log_partition)`` where the partition function sums
    ``exp(alpha r)`` over every state-action-goal tuple.
    """
    logits = alpha * reward_tensor(mdp)
    shift = logits.max()
    weights = np.exp(logits - shift)
    z = weights.sum()
    return weights / z, float(np.log(z) + shift)


# ---------------------------------------------------------------------------
# occupancy


def _goal_flow_matrix(mdp: GoalMDP, pi_g: np.ndarray) -> np.ndarray:
    """Matrix ``M[(s,a),(s',a')] = p(s'|s,a) pi(a'|s')`` for one goal."""
    n = mdp.n_states * mdp.n_actions
    return np.einsum("sat,tb->satb", mdp.transition, pi_g).reshape(n, n)


def solve_conditional_occupancy(mdp: GoalMDP, policy) -> np.ndarray:
    """Per-goal normalized occupancies ``d(s, a | g)`` as an ``[S, A, G]`` tensor."""
    pi = check_policy(mdp, policy)
    n_s, n_a = mdp.n_states, mdp.n_actions
    eye = np.eye(n_s * n_a)
    out = np.empty((n_s, n_a, mdp.n_goals))
    for g in range(mdp.n_goals):
        flow = _goal_flow_matrix(mdp, pi[g])
        rhs = (1.0 - mdp.gamma) * (mdp.initial[:, None] * pi[g]).ravel()
        try:
            sol = np.linalg.solve(eye - mdp.gamma * flow.T, rhs)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - gamma < 1 keeps this regular
            raise RuntimeError(f"occupancy system singular for goal {g}") from exc
        out[:, :, g] = sol.reshape(n_s, n_a)
    np.clip(out, 0.0, None, out=out)
    return out


def solve_occupancy(mdp: GoalMDP, policy, goal_weights=None) -> np.ndarray:
    """Joint occupancy ``d(s,a,g) = w(g) d(s,a|g)``; ``w`` defaults to ``q_train``."""
    weights = mdp.q_train if goal_weights is None else np.asarray(goal_weights, dtype=float)
    return solve_conditional_occupancy(mdp, policy) * weights[None, None, :]


def flow_residual(mdp: GoalMDP, d: np.ndarray, policy, goal_weights=None) -> np.ndarray:
    """Pointwise residual of the policy-explicit Bellman flow constraint."""
    pi = check_policy(mdp, policy)
    weights = mdp.q_train if goal_weights is None else np.asarray(goal_weights, dtype=float)
    inflow = np.einsum("sat,sag->tg", mdp.transition, d)
    source = (1.0 - mdp.gamma) * mdp.initial[:, None] * weights[None, :] + mdp.gamma * inflow
    return d - source[:, None, :] * pi.transpose(1, 2, 0)


def action_free_flow_residual(mdp: GoalMDP, d: np.ndarray, goal_weights=None) -> np.ndarray:
    """Residual ``sum_a d(s,a,g) - (1-gamma) d0(s,g) - gamma * inflow(s,g)``."""
    weights = mdp.q_train if goal_weights is None else np.asarray(goal_weights, dtype=float)
    inflow = np.einsum("sat,sag->tg", mdp.transition, d)
    source = (1.0 - mdp.gamma) * mdp.initial[:, None] * weights[None, :] + mdp.gamma * inflow
    return d.sum(axis=1) - source


def discounted_return_exact(mdp: GoalMDP, policy) -> float:
    """``1/(1-gamma) E_d[r]`` with goals drawn from ``q_test``.

    The sparse reward is zero for goals outside the training support, so test
    goals should carry training weight for this to match sampled rollouts.
    """
    d = solve_occupancy(mdp, policy, goal_weights=mdp.q_test)
    r = reward_tensor(mdp)
    return float((d * r).sum() / (1.0 - mdp.gamma))


# ---------------------------------------------------------------------------
# planning


def optimal_q_values(mdp: GoalMDP, reward: np.ndarray, tol: float = 1e-10,
                     max_iters: int = 1_000_000) -> np.ndarray:
    """Q-iteration for a batch of rewards ``reward[s, a, k]``; stops when max change < tol."""
    q = np.zeros_like(reward, dtype=np.float64)
    for _ in range(max_iters):
        v = q.max(axis=1)
        q_new = reward + mdp.gamma * np.einsum("sat,tk->sak", mdp.transition, v)
        if np.max(np.abs(q_new - q)) < tol:
            return q_new
        q = q_new
    raise RuntimeError("Q-iteration did not converge")  # pragma: no cover


def value_iteration_expert(mdp: GoalMDP, g: int) -> np.ndarray:
    """Greedy ``[S, A]`` policy for goal ``g`` under the sparse reward (lowest-index ties)."""
    g = check_index(g, mdp.n_goals, "g")
    if mdp.q_train[g] <= 0:
        raise ValidationError(f"goal {g} has zero training weight")
    q = optimal_q_values(mdp, reward_tensor(mdp)[:, :, g:g + 1])[:, :, 0]
    pi = np.zeros((mdp.n_states, mdp.n_actions))
    pi[np.arange(mdp.n_states), q.argmax(axis=1)] = 1.0
    return pi


def expert_policy(mdp: GoalMDP) -> np.ndarray:
    """Full ``[G, S, A]`` expert; goals without training weight stay uniform."""
    r = reward_tensor(mdp)
    q = optimal_q_values(mdp, r)
    pi = uniform_policy(mdp)
    for g in np.flatnonzero(mdp.q_train > 0):
        pi[g] = 0.0
        pi[g, np.arange(mdp.n_states), q[:, :, g].argmax(axis=1)] = 1.0
    return pi


# ---------------------------------------------------------------------------
# sampling


def sample_next_states(mdp: GoalMDP, states, actions, rng) -> np.ndarray:
    """Vectorized inverse-CDF draw of ``s' ~ p(.|s, a)``."""
    cdf = np.cumsum(mdp.transition[states, actions], axis=-1)
    u = rng.random(np.shape(states))[..., None]
    nxt = (u > cdf).sum(axis=-1)
    return np.minimum(nxt, mdp.n_states - 1)


def monte_carlo_return(mdp: GoalMDP, policy, n_episodes: int, horizon: int, seed=None,
                       goal_weights=None) -> tuple[float, float]:
    """Sampled ``sum_t gamma^t 1(phi(s_{t+1}) = g)``; returns ``(mean, standard error)``."""
    rng = rng_from(seed)
    pi = check_policy(mdp, policy)
    weights = mdp.q_test if goal_weights is None else np.asarray(goal_weights, dtype=float)
    goals = rng.choice(mdp.n_goals, size=n_episodes, p=weights)
    states = rng.choice(mdp.n_states, size=n_episodes, p=mdp.initial)
    total = np.zeros(n_episodes)
    discount = 1.0
    cdf_pi = np.cumsum(pi, axis=2)
    for _ in range(horizon):
        u = rng.random(n_episodes)[:, None]
        actions = np.minimum((u > cdf_pi[goals, states]).sum(axis=1), mdp.n_actions - 1)
        states = sample_next_states(mdp, states, actions, rng)
        total += discount * (mdp.phi[states] == goals)
        discount *= mdp.gamma
    return float(total.mean()), float(total.std(ddof=1) / np.sqrt(n_episodes))


def reachable_states(mdp: GoalMDP, start: int) -> set[int]:
    """Breadth-first reachability over transitions with positive probability."""
    seen = {int(start)}
    frontier = [int(start)]
    support = mdp.transition > 0
    while frontier:
        s = frontier.pop()
        for t in np.flatnonzero(support[s].any(axis=0)):
            if int(t) not in seen:
                seen.add(int(t))
                frontier.append(int(t))
    return seen


def describe(mdp: GoalMDP) -> dict[str, Any]:
    return {"n_states": mdp.n_states, "n_actions": mdp.n_actions, "n_goals": mdp.n_goals,
            "gamma": mdp.gamma, **mdp.descriptor}
