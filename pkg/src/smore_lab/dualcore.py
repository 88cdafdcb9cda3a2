"""Tabular dual objectives for mixture occupancy matching and their solvers.

The score table ``S[s, a, g]`` is the Lagrange multiplier of the
policy-explicit Bellman flow constraint; the value table ``V[s, g]`` plays
the same role for the action-free constraint. With ``y = gamma P^pi S - S``
the general dual reads::

    beta (1-gamma) E_{d0,pi}[S] + E_{Mix(q,rho)}[f*(y)] - (1-beta) E_rho[y]

and, for a fixed policy, its minimum over ``S`` equals the negated mixture
divergence of that policy's occupancy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import ValidationError, as_float_array
from .divergence import DomainError, get_divergence
from .mdp import GoalMDP, goal_transition_distribution
from .occupancy import check_beta, extract_policy_from_occupancy, mixture

KL_EXPONENT_LIMIT = 50.0


class SolverDivergenceError(RuntimeError):
    """The objective became non-finite during optimization."""

    def __init__(self, step: int, value: float):
        self.step = step
        super().__init__(f"dual objective became {value} at step {step}")


# ---------------------------------------------------------------------------
# building blocks


def policy_backup(mdp: GoalMDP, policy: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """``(P^pi S)(s,a,g) = sum_s' p(s'|s,a) sum_a' pi(a'|s',g) S(s',a',g)``."""
    next_value = np.einsum("gsa,sag->sg", policy, scores)
    return np.einsum("sat,tg->sag", mdp.transition, next_value)


def policy_backup_adjoint(mdp: GoalMDP, policy: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`policy_backup`: maps a weight tensor onto next-state scores."""
    inflow = np.einsum("sat,sag->tg", mdp.transition, weights)
    return np.einsum("gsa,sg->sag", policy, inflow)


def score_residual(mdp: GoalMDP, policy, scores) -> np.ndarray:
    return mdp.gamma * policy_backup(mdp, policy, scores) - scores


def initial_weights(mdp: GoalMDP) -> np.ndarray:
    """``d0(s, g) = d0(s) q_train(g)`` as an ``[S, G]`` table."""
    return mdp.initial[:, None] * mdp.q_train[None, :]


def _initial_term(mdp, policy, scores, initial=None):
    d0 = initial_weights(mdp) if initial is None else initial
    return float(np.einsum("sg,gsa,sag->", d0, policy, scores))


def _check_conjugate_domain(f, y, mq):
    inside = f.conjugate_domain.contains(y) | (mq <= 0)
    if not np.all(inside):
        idx = tuple(int(i) for i in np.argwhere(~inside)[0])
        raise DomainError(f.name, float(y[idx]), f"{f.conjugate_domain} at (s,a,g)={idx}")


def _inputs(scores, policy, q, rho):
    return (as_float_array(scores, "scores", ndim=3), as_float_array(policy, "policy", ndim=3),
            as_float_array(q, "q", ndim=3), as_float_array(rho, "rho", ndim=3))


# ---------------------------------------------------------------------------
# action-dependent dual


def dual_objective_general(scores, policy, div, q, rho, beta, mdp: GoalMDP) -> float:
    f = get_divergence(div)
    beta = check_beta(beta)
    scores, policy, q, rho = _inputs(scores, policy, q, rho)
    y = score_residual(mdp, policy, scores)
    mq = mixture(beta, q, rho)
    _check_conjugate_domain(f, y, mq)
    conj = np.where(mq > 0, f.conjugate(np.where(mq > 0, y, 0.0)), 0.0)
    value = beta * (1.0 - mdp.gamma) * _initial_term(mdp, policy, scores)
    value += float(np.sum(mq * conj))
    if beta < 1.0:
        value -= (1.0 - beta) * float(np.sum(rho * y))
    return value


def dual_gradient_general(scores, policy, div, q, rho, beta, mdp: GoalMDP) -> np.ndarray:
    """Full gradient in ``S`` (flows through current and next-state scores)."""
    f = get_divergence(div)
    y = score_residual(mdp, policy, scores)
    mq = mixture(beta, q, rho)
    # (f*)' = (f')^{-1}
    weight = mq * np.where(mq > 0, f.derivative_inverse(np.where(mq > 0, y, 0.0)), 0.0)
    coeff = weight - (1.0 - beta) * rho
    grad = beta * (1.0 - mdp.gamma) * np.einsum("sg,gsa->sag", initial_weights(mdp), policy)
    return grad + mdp.gamma * policy_backup_adjoint(mdp, policy, coeff) - coeff


def dual_objective_chi2(scores, policy, q, rho, beta, mdp: GoalMDP) -> float:
    """Contrastive form of the chi-square dual (Bellman term weighted by 0.25)."""
    beta = check_beta(beta)
    scores, policy, q, rho = _inputs(scores, policy, q, rho)
    backup = policy_backup(mdp, policy, scores)
    y = mdp.gamma * backup - scores
    mq = mixture(beta, q, rho)
    decrease_policy = beta * (1.0 - mdp.gamma) * _initial_term(mdp, policy, scores)
    decrease_next = beta * mdp.gamma * float(np.sum(q * backup))
    increase_goal = beta * float(np.sum(q * scores))
    bellman = 0.25 * float(np.sum(mq * y * y))
    return decrease_policy + decrease_next - increase_goal + bellman


def _kl_exponent(mdp, policy, scores):
    y = score_residual(mdp, policy, scores)
    if np.max(y) > KL_EXPONENT_LIMIT:
        raise ValidationError(
            f"KL dual exponent {np.max(y):.3g} exceeds {KL_EXPONENT_LIMIT}; "
            "normalize the scores (e.g. subtract a constant) before evaluating")
    return y


def dual_objective_kl(scores, policy, q, rho, beta, mdp: GoalMDP) -> float:
    """Telescoped KL instantiation with the dataset playing the initial distribution."""
    beta = check_beta(beta)
    scores, policy, q, rho = _inputs(scores, policy, q, rho)
    y = _kl_exponent(mdp, policy, scores)
    rho_sg = rho.sum(axis=1)
    policy_part = beta * (1.0 - mdp.gamma) * float(np.einsum("sg,gsa,sag->", rho_sg, policy, scores))
    data_part = (1.0 - beta) * float(np.sum(rho * scores))
    return policy_part + data_part + float(np.sum(mixture(beta, q, rho) * np.exp(y)))


def dual_objective_kl_untelescoped(scores, policy, q, rho, beta, mdp: GoalMDP,
                                   initial=None) -> float:
    """KL instantiation before telescoping; ``initial`` is an ``[S, G]`` start table."""
    beta = check_beta(beta)
    scores, policy, q, rho = _inputs(scores, policy, q, rho)
    y = _kl_exponent(mdp, policy, scores)
    value = beta * (1.0 - mdp.gamma) * _initial_term(mdp, policy, scores, initial)
    value += float(np.sum(mixture(beta, q, rho) * np.exp(y)))
    return value - (1.0 - beta) * float(np.sum(rho * y))


# ---------------------------------------------------------------------------
# solutions


@dataclass
class DualSolution:
    scores: np.ndarray
    policy: np.ndarray
    objective: float
    converged: bool
    greedy_policy: np.ndarray | None = None
    weights: np.ndarray | None = None
    history: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "objective": self.objective,
            "converged": self.converged,
            "shape": list(self.scores.shape),
            "scores": self.scores.ravel().tolist(),
        })


def soft_greedy(scores: np.ndarray, temperature: float) -> np.ndarray:
    """``pi(a|s,g) ~ exp(S(s,a,g) / temperature)`` laid out as ``[G, S, A]``."""
    z = scores / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return np.ascontiguousarray((e / e.sum(axis=1, keepdims=True)).transpose(2, 0, 1))


def greedy(scores: np.ndarray) -> np.ndarray:
    """Argmax policy (lowest index on ties)."""
    n_s, n_a, n_g = scores.shape
    pi = np.zeros((n_g, n_s, n_a))
    g_idx, s_idx = np.indices((n_g, n_s))
    pi[g_idx, s_idx, scores.argmax(axis=1).T] = 1.0
    return pi


def _problem(mdp, div, beta, rho, q):
    f = get_divergence(div)
    beta = check_beta(beta)
    q = goal_transition_distribution(mdp) if q is None else as_float_array(q, "q", ndim=3)
    rho = as_float_array(rho, "rho", ndim=3)
    return f, beta, q, rho


def solve_dual_tabular(mdp: GoalMDP, div, beta, rho, q=None, steps: int = 20000,
                       lr: float = 1.0, policy_temperature: float = 0.05,
                       grad_tol: float = 1e-8, record_every: int = 1) -> DualSolution:
    """Alternate one gradient step on ``S`` with a soft-greedy policy refresh."""
    f, beta, q, rho = _problem(mdp, div, beta, rho, q)
    if f.name not in ("chi2", "kl_reverse"):
        raise ValidationError("solve_dual_tabular supports chi2 and kl_reverse")
    scores = np.zeros_like(q)
    history = []
    grad_norm = np.inf
    for step in range(steps):
        policy = soft_greedy(scores, policy_temperature)
        if step % record_every == 0:
            value = dual_objective_general(scores, policy, f, q, rho, beta, mdp)
            if not np.isfinite(value):
                raise SolverDivergenceError(step, value)
            history.append(value)
        grad = dual_gradient_general(scores, policy, f, q, rho, beta, mdp)
        grad_norm = float(np.max(np.abs(grad)))
        if not np.isfinite(grad_norm):
            raise SolverDivergenceError(step, grad_norm)
        scores = scores - lr * grad
    policy = soft_greedy(scores, policy_temperature)
    value = dual_objective_general(scores, policy, f, q, rho, beta, mdp)
    if not np.isfinite(value):
        raise SolverDivergenceError(steps, value)
    return DualSolution(scores=scores, policy=policy, objective=value,
                        converged=grad_norm < grad_tol, greedy_policy=greedy(scores),
                        history=history)


def minimize_scores(mdp: GoalMDP, policy, div, beta, rho, q=None, steps: int = 20000,
                    lr: float = 1.0, scores=None) -> tuple[np.ndarray, float]:
    """Gradient descent on ``S`` with the policy held fixed; returns ``(S, objective)``."""
    f, beta, q, rho = _problem(mdp, div, beta, rho, q)
    policy = as_float_array(policy, "policy", ndim=3)
    s = np.zeros_like(q) if scores is None else np.array(scores, dtype=float)
    for _ in range(steps):
        s -= lr * dual_gradient_general(s, policy, f, q, rho, beta, mdp)
    return s, dual_objective_general(s, policy, f, q, rho, beta, mdp)


# ---------------------------------------------------------------------------
# action-free dual


def closed_form_weight(div, y):
    """``w* = max(0, (f')^{-1}(y))``, the maximizer of ``w y - f(w)`` over ``w >= 0``."""
    f = get_divergence(div)
    arr = np.asarray(y, dtype=float)
    if not np.all(f.inverse_domain.contains(arr)):
        bad = arr[~f.inverse_domain.contains(arr)].ravel()[0] if arr.ndim else float(arr)
        raise DomainError(f.name, float(bad), str(f.inverse_domain), what="derivative inverse")
    w = np.maximum(0.0, f.derivative_inverse(arr))
    return float(w) if np.ndim(y) == 0 else w


def value_residual(mdp: GoalMDP, values) -> np.ndarray:
    """``y(s,a,g) = gamma E_{s'}[V(s',g)] - V(s,g)``."""
    return mdp.gamma * np.einsum("sat,tg->sag", mdp.transition, values) - values[:, None, :]


def _action_free_parts(values, f, q, rho, beta, mdp):
    y = value_residual(mdp, values)
    mq = mixture(beta, q, rho)
    w = np.where(mq > 0, closed_form_weight(f, np.where(mq > 0, y, 0.0)), 0.0)
    return y, mq, w


def action_free_dual_objective(values, div, q, rho, beta, mdp: GoalMDP) -> float:
    f = get_divergence(div)
    beta = check_beta(beta)
    values = as_float_array(values, "values", ndim=2)
    q = as_float_array(q, "q", ndim=3)
    rho = as_float_array(rho, "rho", ndim=3)
    y, mq, w = _action_free_parts(values, f, q, rho, beta, mdp)
    value = beta * (1.0 - mdp.gamma) * float(np.sum(initial_weights(mdp) * values))
    value += float(np.sum(mq * (w * y - f.generator(w))))
    if beta < 1.0:
        value -= (1.0 - beta) * float(np.sum(rho * y))
    return value


def action_free_gradient(values, div, q, rho, beta, mdp: GoalMDP) -> np.ndarray:
    f = get_divergence(div)
    y, mq, w = _action_free_parts(values, f, q, rho, beta, mdp)
    # envelope theorem: d/dy [w* y - f(w*)] = w*
    coeff = mq * w - (1.0 - beta) * rho
    inflow = np.einsum("sat,sag->tg", mdp.transition, coeff)
    return beta * (1.0 - mdp.gamma) * initial_weights(mdp) + mdp.gamma * inflow - coeff.sum(axis=1)


def recovered_occupancy(values, div, q, rho, beta, mdp: GoalMDP) -> np.ndarray:
    """Occupancy implied by the closed-form weights: ``(Mix(q,rho) w* - (1-beta) rho) / beta``."""
    f = get_divergence(div)
    _, mq, w = _action_free_parts(values, f, q, rho, beta, mdp)
    return np.clip((mq * w - (1.0 - beta) * rho) / beta, 0.0, None)


def solve_dual_action_free(mdp: GoalMDP, div="chi2", beta=0.5, rho=None, q=None,
                           steps: int = 20000, lr: float = 1.0,
                           residual_temperature: float = 0.05,
                           grad_tol: float = 1e-8) -> DualSolution:
    """Gradient descent on ``V``; the policy is read off the closed-form weights.

    States where the recovered occupancy carries no mass fall back to a
    softmax over the TD residual with the given temperature.
    """
    if rho is None:
        raise ValidationError("solve_dual_action_free needs the dataset joint rho")
    f, beta, q, rho = _problem(mdp, div, beta, rho, q)
    values = np.zeros((mdp.n_states, mdp.n_goals))
    history = []
    grad_norm = np.inf
    for step in range(steps):
        grad = action_free_gradient(values, f, q, rho, beta, mdp)
        grad_norm = float(np.max(np.abs(grad)))
        if not np.isfinite(grad_norm):
            raise SolverDivergenceError(step, grad_norm)
        if grad_norm < grad_tol:
            break
        values = values - lr * grad
    value = action_free_dual_objective(values, f, q, rho, beta, mdp)
    history.append(value)
    if not np.isfinite(value):
        raise SolverDivergenceError(steps, value)

    y = value_residual(mdp, values)
    d = recovered_occupancy(values, f, q, rho, beta, mdp)
    from_weights = extract_policy_from_occupancy(d)
    fallback = soft_greedy(y, residual_temperature)
    empty = (d.sum(axis=1) < 1e-12).T[:, :, None]
    policy = np.where(empty, fallback, from_weights)
    _, _, w = _action_free_parts(values, f, q, rho, beta, mdp)
    return DualSolution(scores=values, policy=policy, objective=value,
                        converged=grad_norm < grad_tol, greedy_policy=greedy(d + 0.0 * y),
                        weights=w, history=history)
