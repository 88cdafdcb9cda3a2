"""Mixture occupancy matching in the primal: Frank-Wolfe and an exhaustive oracle."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import ValidationError, as_float_array, check_same_shape
from .divergence import get_divergence, divergence
from .mdp import (
    GoalMDP,
    goal_transition_distribution,
    optimal_q_values,
    solve_conditional_occupancy,
    solve_occupancy,
)

DEFAULT_SMOOTHING = 1e-9
ORACLE_LIMIT = 10**6


def mixture(beta: float, a, b) -> np.ndarray:
    """``beta * a + (1 - beta) * b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    check_same_shape(a, b, "mixture components")
    return beta * a + (1.0 - beta) * b


def check_beta(beta: float) -> float:
    beta = float(beta)
    if not 0.0 < beta <= 1.0:
        raise ValidationError(f"beta={beta} must lie in (0, 1]")
    return beta


def smooth(m: np.ndarray, eps: float) -> np.ndarray:
    """Blend ``eps`` of uniform mass into a normalized tensor."""
    if eps <= 0:
        return m
    return (1.0 - eps) * m + eps / m.size


def mixture_divergence(div, d, q, rho, beta: float, smoothing: float = 0.0) -> float:
    """``D_f(Mix_beta(d, rho) || Mix_beta(q, rho))``, optionally smoothed on both sides."""
    beta = check_beta(beta)
    md = smooth(mixture(beta, d, rho), smoothing)
    mq = smooth(mixture(beta, q, rho), smoothing)
    return divergence(div, md, mq)


def extract_policy_from_occupancy(d, tol: float = 1e-12) -> np.ndarray:
    """``pi(a|s,g) = d(s,a,g) / sum_a d(s,a,g)``; uniform where the state carries no mass."""
    d = as_float_array(d, "occupancy", ndim=3)
    mass = d.sum(axis=1, keepdims=True)
    n_actions = d.shape[1]
    safe = np.where(mass < tol, 1.0, mass)
    pi = np.where(mass < tol, 1.0 / n_actions, d / safe)
    return np.ascontiguousarray(pi.transpose(2, 0, 1))


@dataclass
class PrimalSolution:
    occupancy: np.ndarray
    objective: float
    raw_objective: float
    policy: np.ndarray
    iterations: int
    duality_gap_certificate: float
    converged: bool
    history: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "objective": self.objective,
            "raw_objective": self.raw_objective if np.isfinite(self.raw_objective) else None,
            "iterations": self.iterations,
            "duality_gap_certificate": self.duality_gap_certificate,
            "converged": self.converged,
            "shape": list(self.occupancy.shape),
            "occupancy": self.occupancy.ravel().tolist(),
        })


def _golden_section(fun, lo=0.0, hi=1.0, tol=1e-10):
    ratio = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - ratio * (hi - lo)
    x2 = lo + ratio * (hi - lo)
    f1, f2 = fun(x1), fun(x2)
    while hi - lo > tol:
        if f1 < f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - ratio * (hi - lo)
            f1 = fun(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + ratio * (hi - lo)
            f2 = fun(x2)
    x = 0.5 * (lo + hi)
    return x, fun(x)


def _raw_or_inf(div, d, q, rho, beta) -> float:
    try:
        return mixture_divergence(div, d, q, rho, beta)
    except ValueError:
        return float("inf")


def _vertex(mdp: GoalMDP, cost: np.ndarray) -> np.ndarray:
    """Linear minimization over the action-free flow polytope (one MDP per goal)."""
    q_vals = optimal_q_values(mdp, -cost)
    pi = np.zeros((mdp.n_goals, mdp.n_states, mdp.n_actions))
    g_idx, s_idx = np.indices((mdp.n_goals, mdp.n_states))
    pi[g_idx, s_idx, q_vals.argmax(axis=1).T] = 1.0
    return solve_occupancy(mdp, pi)


def frank_wolfe_primal(mdp: GoalMDP, div, beta: float, rho, q=None, max_iters: int = 2000,
                       gap_tol: float = 1e-8, smoothing: float = DEFAULT_SMOOTHING,
                       line_search_tol: float = 1e-10) -> PrimalSolution:
    """Minimize the smoothed mixture divergence over the action-free flow polytope.

    Each step solves a per-goal planning problem with reward equal to the
    negative gradient, then line-searches exactly along the segment towards
    that vertex. The Frank-Wolfe gap at termination upper-bounds the
    suboptimality of the returned objective.
    """
    f = get_divergence(div)
    if f.name == "total_variation":
        raise ValidationError("Frank-Wolfe needs a differentiable generator")
    beta = check_beta(beta)
    q = goal_transition_distribution(mdp) if q is None else as_float_array(q, "q", ndim=3)
    rho = as_float_array(rho, "rho", ndim=3)
    check_same_shape(q, rho, "q/rho")
    mq = smooth(mixture(beta, q, rho), smoothing)

    def objective(d):
        md = smooth(beta * d + (1.0 - beta) * rho, smoothing)
        return float(np.sum(mq * f.generator(md / mq)))

    def gradient(d):
        md = smooth(beta * d + (1.0 - beta) * rho, smoothing)
        scale = beta * (1.0 - smoothing if smoothing > 0 else 1.0)
        return scale * f.derivative(md / mq)

    d = solve_occupancy(mdp, np.full((mdp.n_goals, mdp.n_states, mdp.n_actions),
                                     1.0 / mdp.n_actions))
    value = objective(d)
    history = [value]
    gap = np.inf
    iterations = 0
    for iterations in range(1, max_iters + 1):
        grad = gradient(d)
        v = _vertex(mdp, grad)
        direction = v - d
        gap = float(-np.sum(grad * direction))
        if gap < gap_tol:
            iterations -= 1
            break
        step, new_value = _golden_section(lambda t: objective(d + t * direction),
                                          tol=line_search_tol)
        full = objective(v)
        if full <= new_value:
            step, new_value = 1.0, full
        if new_value <= value:
            d = d + step * direction
            value = new_value
        history.append(value)
    else:
        grad = gradient(d)
        gap = float(-np.sum(grad * (_vertex(mdp, grad) - d)))
    return PrimalSolution(
        occupancy=d,
        objective=value,
        raw_objective=_raw_or_inf(f, d, q, rho, beta),
        policy=extract_policy_from_occupancy(d),
        iterations=iterations,
        duality_gap_certificate=max(gap, 0.0),
        converged=gap < gap_tol,
        history=history,
    )


def exhaustive_policy_oracle(mdp: GoalMDP, div, beta: float, rho, q=None,
                             smoothing: float = DEFAULT_SMOOTHING):
    """Best deterministic goal-conditioned policy by brute-force enumeration.

    Returns ``(policy, objective, n_policies)``. Goals without training
    weight carry no occupancy mass, so only weighted goals are enumerated.
    """
    f = get_divergence(div)
    beta = check_beta(beta)
    active = np.flatnonzero(mdp.q_train > 0)
    n_policies = mdp.n_actions ** (mdp.n_states * len(active))
    if n_policies > ORACLE_LIMIT:
        raise ValidationError(f"instance too large for enumeration ({n_policies} policies)")
    q = goal_transition_distribution(mdp) if q is None else as_float_array(q, "q", ndim=3)
    rho = as_float_array(rho, "rho", ndim=3)
    mq = smooth(mixture(beta, q, rho), smoothing)

    best_value, best_actions = np.inf, None
    pi = np.full((mdp.n_goals, mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
    for actions in itertools.product(range(mdp.n_actions), repeat=mdp.n_states * len(active)):
        table = np.asarray(actions).reshape(len(active), mdp.n_states)
        for i, g in enumerate(active):
            pi[g] = np.eye(mdp.n_actions)[table[i]]
        d = solve_conditional_occupancy(mdp, pi) * mdp.q_train[None, None, :]
        md = smooth(beta * d + (1.0 - beta) * rho, smoothing)
        value = float(np.sum(mq * f.generator(md / mq)))
        if value < best_value:
            best_value, best_actions = value, table.copy()
    for i, g in enumerate(active):
        pi[g] = np.eye(mdp.n_actions)[best_actions[i]]
    return pi, best_value, n_policies
