"""Numerical certificate suites behind the ``verify`` command.

Each suite runs on fixed seeds and returns a :class:`VerifyReport` listing
named checks with the measured quantity and the tolerance it was held to.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import ValidationError
from .bounds import offline_bound, return_entropy_bound
from .divergence import CATALOGUE, get_divergence
from .dualcore import (closed_form_weight, minimize_scores, solve_dual_action_free,
                       solve_dual_tabular)
from .instances import certified_instances, dataset_like_rho
from .mdp import goal_transition_distribution, random_mdp, random_policy, solve_occupancy
from .occupancy import exhaustive_policy_oracle, frank_wolfe_primal, mixture_divergence

SUITES = ("conjugates", "duality", "bounds", "gradients")
CLOSED_FORM_DIVERGENCES = ("chi2", "kl_reverse", "squared_hellinger", "jensen_shannon")


@dataclass
class Check:
    name: str
    status: str
    measured: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.status == "pass"


@dataclass
class VerifyReport:
    suite: str
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, measured: float, tolerance: float, ok: bool) -> Check:
        check = Check(name, "pass" if ok else "fail", float(measured), float(tolerance))
        self.checks.append(check)
        return check

    def upper(self, name, measured, tolerance) -> Check:
        """Pass when ``measured <= tolerance`` (NaN fails)."""
        return self.add(name, measured, tolerance, bool(measured <= tolerance))

    def lower(self, name, measured, tolerance) -> Check:
        """Pass when ``measured >= tolerance``."""
        return self.add(name, measured, tolerance, bool(measured >= tolerance))

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {"suite": self.suite, "passed": self.passed,
                "checks": [asdict(c) for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=True)

    @classmethod
    def merge(cls, suite: str, reports) -> "VerifyReport":
        out = cls(suite)
        for r in reports:
            out.checks.extend(Check(f"{r.suite}.{c.name}", c.status, c.measured, c.tolerance)
                              for c in r.checks)
        return out


# ---------------------------------------------------------------------------
# conjugates


def _grid_sup(f, ys, lo=0.0, hi=50.0, coarse=50_001, fine=2_001, chunk=100):
    """Grid search for ``sup_{x in [lo, hi]} x y - f(x)``, refined around the coarse argmax."""
    xs = np.linspace(lo, hi, coarse)
    fx = f.generator(xs)
    step = xs[1] - xs[0]
    out = np.empty(len(ys))
    for start in range(0, len(ys), chunk):
        y = ys[start:start + chunk, None]
        k = np.argmax(xs[None, :] * y - fx[None, :], axis=1)
        centre = xs[k][:, None]
        local = np.clip(centre + np.linspace(-step, step, fine)[None, :], lo, hi)
        out[start:start + chunk] = np.max(local * y - f.generator(local), axis=1)
    return out


def conjugates_suite() -> VerifyReport:
    report = VerifyReport("conjugates")
    grid = np.linspace(0.05, 10.0, 100)
    rng = np.random.default_rng(0)
    for name in sorted(CATALOGUE):
        f = get_divergence(name)
        report.upper(f"{name}.generator_at_one", abs(float(f.generator(1.0))), 0.0)
        x = grid[np.abs(grid - 1.0) > 1e-12] if name == "total_variation" else grid
        y = f.derivative(x)
        gap = np.abs(f.conjugate(y) - (x * y - f.generator(x)))
        report.upper(f"{name}.fenchel_young", float(gap.max()), 1e-9)
        lo, hi = f.nonnegative_sup_range
        ys = rng.uniform(lo, hi, size=20)
        biconj = np.abs(_grid_sup(f, ys) - f.conjugate(ys))
        report.upper(f"{name}.biconjugation", float(biconj.max()), 1e-4)
    return report


# ---------------------------------------------------------------------------
# duality


def _closed_form_weight_gap(div: str, n: int = 1000, seed: int = 1) -> float:
    f = get_divergence(div)
    hi = min(f.inverse_domain.hi, 3.0)
    ys = np.random.default_rng(seed).uniform(-5.0, hi - 0.2, size=n)
    w = closed_form_weight(div, ys)
    attained = w * ys - f.generator(w)
    return float(np.max(np.abs(_grid_sup(f, ys) - attained)))


def _chain_agreement(inst) -> tuple[int, float]:
    """Mismatched greedy actions on visited (state, goal) pairs, and the action-free objective."""
    mismatches, worst_objective = 0, -np.inf
    for beta in (0.5, 1.0):
        tab = solve_dual_tabular(inst.mdp, "chi2", beta, inst.rho, steps=3000)
        free = solve_dual_action_free(inst.mdp, "chi2", beta, inst.rho, steps=3000)
        visited = (solve_occupancy(inst.mdp, tab.greedy_policy).sum(axis=1) > 0).T
        mismatches += int(np.sum(free.policy.argmax(2)[visited]
                                 != tab.greedy_policy.argmax(2)[visited]))
        worst_objective = max(worst_objective, free.objective)
    return mismatches, worst_objective


def duality_suite() -> VerifyReport:
    report = VerifyReport("duality")
    for inst in certified_instances():
        q = goal_transition_distribution(inst.mdp)
        for beta in (0.5, 1.0):
            tag = f"{inst.name}.beta={beta}"
            primal = frank_wolfe_primal(inst.mdp, "chi2", beta, inst.rho).objective
            _, oracle, _ = exhaustive_policy_oracle(inst.mdp, "chi2", beta, inst.rho)
            report.upper(f"{tag}.primal_vs_oracle", abs(primal - oracle), 1e-3)
            sol = solve_dual_tabular(inst.mdp, "chi2", beta, inst.rho, steps=3000)
            d = solve_occupancy(inst.mdp, sol.greedy_policy)
            gap = mixture_divergence("chi2", d, q, inst.rho, beta, 1e-9) - primal
            report.upper(f"{tag}.dual_policy_vs_primal", gap, 1e-2)
            # the dual minimum over scores equals minus the primal optimum
            _, inner = minimize_scores(inst.mdp, sol.greedy_policy, "chi2", beta, inst.rho,
                                       steps=3000)
            report.upper(f"{tag}.dual_value_vs_primal", abs(-inner - primal), 5e-2)
    for seed in (11, 12):
        # non-achievable instances: the conjugate is evaluated away from zero
        mdp = random_mdp(4, 2, 2, gamma=0.8, seed=seed)
        rho = dataset_like_rho(mdp, seed)
        policy, best, _ = exhaustive_policy_oracle(mdp, "chi2", 0.5, rho)
        _, inner = minimize_scores(mdp, policy, "chi2", 0.5, rho, steps=20000)
        report.upper(f"random{seed}.fixed_policy_dual_value", abs(-inner - best), 1e-4)
    for div in CLOSED_FORM_DIVERGENCES:
        report.upper(f"closed_form_weight.{div}", _closed_form_weight_gap(div), 1e-6)
    chain = next(i for i in certified_instances() if i.name == "chain3")
    mismatches, objective = _chain_agreement(chain)
    report.upper("chain3.action_free_vs_tabular_policy", mismatches, 0)
    report.upper("chain3.action_free_objective", objective, 1e-12)
    return report


# ---------------------------------------------------------------------------
# bounds


def bounds_suite(n_entropy: int = 50, n_offline: int = 20) -> VerifyReport:
    report = VerifyReport("bounds")
    rng = np.random.default_rng(0)
    worst_gap, worst_f = 0.0, np.inf
    for k in range(n_entropy):
        mdp = random_mdp(4, 3, 2, gamma=0.9, seed=k, branching=2)
        pi = random_policy(mdp, seed=1000 + k)
        bound = return_entropy_bound(mdp, pi, float(rng.uniform(0.5, 5.0)))
        worst_gap = max(worst_gap, abs(bound.kl_gap))
        worst_f = min(worst_f, bound.f_slack)
    report.upper("kl_identity_gap", worst_gap, 1e-6)
    report.lower("chi2_bound_slack", worst_f, -1e-9)
    worst = np.inf
    for k in range(n_offline):
        mdp = random_mdp(4, 3, 2, gamma=0.9, seed=50 + k, branching=2)
        pi = random_policy(mdp, seed=1050 + k)
        bound = offline_bound(mdp, pi, dataset_like_rho(mdp, k), float(rng.uniform(0.1, 0.95)))
        worst = min(worst, bound.slack)
    report.lower("offline_bound_slack", worst, -1e-9)
    return report


# ---------------------------------------------------------------------------
# gradients


def _expectile_fit(values, tau: float) -> float:
    """Scalar expectile from the root of the bias gradient of a constant network."""
    from scipy.optimize import brentq

    from .agents.losses import expectile_loss
    from .nn import DenseNet

    values = np.asarray(values, dtype=float)
    net = DenseNet([1, 1], seed=0, dtype=np.float64)
    net.params[0][...] = 0.0
    x = np.zeros((len(values), 1))

    def slope(m):
        net.params[1][0] = m
        return expectile_loss(net, (x, values, tau))[1][1][0]

    return brentq(slope, values.min() - 1, values.max() + 1, xtol=1e-14)


def gradients_suite() -> VerifyReport:
    from .agents.losses import (ScoreBatch, ValueBatch, awr_weights, dual_value_loss,
                                expectile_loss, logistic_loss, regression_loss, score_loss,
                                weighted_log_likelihood_loss)
    from .nn import DenseNet, gradient_check

    report = VerifyReport("gradients")
    rng = np.random.default_rng(0)

    def x(n, width):
        return rng.normal(size=(n, width))

    cases = {
        "score_loss": (DenseNet([7, 12, 12, 1], seed=1), score_loss,
                       ScoreBatch(x(9, 7), x(9, 7), x(9, 7), x(9, 7),
                                  target_q=rng.normal(size=9), target_rho=rng.normal(size=9),
                                  beta=0.5, gamma=0.9)),
        "expectile_loss": (DenseNet([5, 10, 1], seed=2), expectile_loss,
                           (x(20, 5), rng.normal(size=20) * 3, 0.8)),
        "awr_policy_loss": (DenseNet([6, 10, 4], seed=3), weighted_log_likelihood_loss,
                            (x(15, 6), rng.integers(4, size=15),
                             awr_weights(rng.normal(size=15), 3.0))),
        "regression_loss": (DenseNet([4, 8, 1], seed=4), regression_loss,
                            (x(12, 4), rng.normal(size=12))),
        "discriminator_loss": (DenseNet([4, 8, 1], seed=5), logistic_loss,
                               (x(12, 4), rng.integers(2, size=12))),
        "dual_value_loss": (DenseNet([4, 8, 1], seed=6), dual_value_loss,
                            ValueBatch(x(6, 4), x(10, 4), x(10, 4),
                                       reward=rng.normal(size=10), gamma=0.9)),
    }
    for name, (net, loss, batch) in cases.items():
        report.upper(f"{name}.relative_error", gradient_check(net, loss, batch), 1e-4)

    values = np.random.default_rng(1).normal(size=50)
    report.upper("expectile_half_is_mean", abs(_expectile_fit(values, 0.5) - values.mean()), 1e-8)
    report.upper("expectile_0.99_of_0_and_2", abs(_expectile_fit([0.0, 2.0], 0.99) - 1.98), 1e-6)
    return report


_RUNNERS = {"conjugates": conjugates_suite, "duality": duality_suite,
            "bounds": bounds_suite, "gradients": gradients_suite}


def run_suite(suite: str) -> VerifyReport:
    """Run one named suite, or every suite for ``"all"``."""
    if suite == "all":
        return VerifyReport.merge("all", [_RUNNERS[s]() for s in SUITES])
    if suite not in _RUNNERS:
        raise ValidationError(f"unknown suite {suite!r}; choose from {[*SUITES, 'all']}")
    return _RUNNERS[suite]()
