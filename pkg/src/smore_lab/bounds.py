"""Numerical checks of the GCRL-to-matching bounds under a soft goal distribution.

With ``q = exp(alpha r) / Z`` over every state-action-goal tuple, the
discounted-occupancy return satisfies::

    J + H(d)/alpha = -KL(d || q)/alpha + log(Z)/alpha

exactly, and any divergence dominating KL gives a lower bound. The
dataset-regularized variant compares ``Mix(d, rho)`` against ``Mix(q, rho)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .divergence import divergence, entropy
from .mdp import GoalMDP, reward_tensor, soft_goal_transition_distribution, solve_occupancy
from .occupancy import check_beta, mixture


@dataclass(frozen=True)
class MatchingBound:
    lhs: float
    kl_rhs: float
    f_rhs: float

    @property
    def kl_gap(self) -> float:
        return self.lhs - self.kl_rhs

    @property
    def f_slack(self) -> float:
        return self.lhs - self.f_rhs


def return_entropy_bound(mdp: GoalMDP, policy, alpha: float, div="chi2") -> MatchingBound:
    """``J + H/alpha`` against its KL identity and an ``f``-divergence lower bound."""
    q, log_z = soft_goal_transition_distribution(mdp, alpha)
    d = solve_occupancy(mdp, policy)
    j = float(np.sum(d * reward_tensor(mdp)))
    lhs = j + entropy(d) / alpha
    kl_rhs = (-divergence("kl_reverse", d, q) + log_z) / alpha
    f_rhs = (-divergence(div, d, q) + log_z) / alpha
    return MatchingBound(lhs, kl_rhs, f_rhs)


@dataclass(frozen=True)
class OfflineBound:
    log_objective: float
    mixture_entropy: float
    log_partition: float
    kl: float
    f_value: float

    @property
    def slack(self) -> float:
        """``log J' + H + log Z + KL``; nonnegative by Jensen and ``Z >= 1``."""
        return self.log_objective + self.mixture_entropy + self.log_partition + self.kl

    @property
    def jensen_slack(self) -> float:
        """Sharper ``log J' + H - log Z + KL`` obtained directly from Jensen."""
        return self.log_objective + self.mixture_entropy - self.log_partition + self.kl

    @property
    def f_slack(self) -> float:
        return self.log_objective + self.mixture_entropy + self.log_partition + self.f_value


def offline_objective(mdp: GoalMDP, policy, rho, beta: float) -> float:
    """``J'(pi) = E_{Mix(d, rho)}[beta e^r + (1-beta) rho Z]`` at unit temperature."""
    beta = check_beta(beta)
    _, log_z = soft_goal_transition_distribution(mdp, 1.0)
    d = solve_occupancy(mdp, policy)
    md = mixture(beta, d, rho)
    return float(np.sum(md * (beta * np.exp(reward_tensor(mdp))
                              + (1.0 - beta) * np.asarray(rho) * np.exp(log_z))))


def offline_bound(mdp: GoalMDP, policy, rho, beta: float, div="chi2") -> OfflineBound:
    beta = check_beta(beta)
    q, log_z = soft_goal_transition_distribution(mdp, 1.0)
    d = solve_occupancy(mdp, policy)
    md, mq = mixture(beta, d, rho), mixture(beta, q, rho)
    return OfflineBound(
        log_objective=float(np.log(offline_objective(mdp, policy, rho, beta))),
        mixture_entropy=entropy(md),
        log_partition=log_z,
        kl=divergence("kl_reverse", md, mq),
        f_value=divergence(div, md, mq),
    )
