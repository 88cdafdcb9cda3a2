import numpy as np
import pytest

from smore_lab.bounds import offline_bound, offline_objective, return_entropy_bound
from smore_lab.instances import dataset_like_rho
from smore_lab.mdp import random_mdp, random_policy, solve_occupancy, reward_tensor


def _triples(n, seed0=0):
    for k in range(n):
        mdp = random_mdp(4, 3, 2, gamma=0.9, seed=seed0 + k, branching=2)
        yield mdp, random_policy(mdp, seed=1000 + k)


@pytest.mark.parametrize("alpha", [1.0, 2.0, 5.0])
def test_kl_identity_is_tight(alpha):
    for mdp, pi in _triples(17):
        bound = return_entropy_bound(mdp, pi, alpha)
        assert abs(bound.kl_gap) < 1e-6
        assert bound.f_slack >= -1e-9


def test_return_is_occupancy_expectation_without_horizon_factor():
    mdp, pi = next(_triples(1))
    bound = return_entropy_bound(mdp, pi, 1.0)
    d = solve_occupancy(mdp, pi)
    assert bound.lhs >= float(np.sum(d * reward_tensor(mdp)))


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.9])
def test_dataset_regularized_bound_holds(beta):
    for k, (mdp, pi) in enumerate(_triples(20, seed0=50)):
        rho = dataset_like_rho(mdp, k)
        bound = offline_bound(mdp, pi, rho, beta)
        assert bound.slack >= -1e-9
        assert bound.jensen_slack >= -1e-9
        assert bound.f_slack >= -1e-9
        assert bound.log_partition >= 0.0


def test_offline_objective_decomposes_into_weighted_terms():
    """Expanding the mixture gives beta^2 E_d[e^r] + beta(1-beta) Z E_d[rho] plus a constant."""
    mdp, pi = next(_triples(1, seed0=7))
    rho = dataset_like_rho(mdp, 7)
    beta = 0.4
    d = solve_occupancy(mdp, pi)
    er = np.exp(reward_tensor(mdp))
    z = er.sum()
    const = (1 - beta) * float(np.sum(rho * (beta * er + (1 - beta) * rho * z)))
    expected = beta ** 2 * float(np.sum(d * er)) + beta * (1 - beta) * z * float(np.sum(d * rho))
    assert offline_objective(mdp, pi, rho, beta) == pytest.approx(expected + const, rel=1e-12)
