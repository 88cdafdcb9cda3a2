import math

import numpy as np
import pytest

from smore_lab._validation import ValidationError
from smore_lab.eval import (
    EvalReport, aggregate, evaluate, final_distance, goal_distances, mann_whitney_u,
    markdown_table, relative_drop, rollout_return, run_rollouts, success_rate, write_rows_csv,
)
from smore_lab.mdp import (
    STAY, build_gridworld, deterministic_policy, discounted_return_exact, expert_policy,
    uniform_policy,
)


def _stay(mdp):
    return deterministic_policy(mdp, np.full((mdp.n_goals, mdp.n_states), STAY))


def test_never_reaching_policy_scores_zero():
    mdp = build_gridworld(5, initial=np.eye(25)[12])
    pi = _stay(mdp)
    assert rollout_return(mdp, pi, 200, 50, seed=0) == 0.0
    assert success_rate(mdp, pi, 200, 50, seed=0) == 0.0


def test_pinned_at_goal_return_is_geometric_sum():
    mdp = build_gridworld(5, test_goals=[0], initial=np.eye(25)[0])
    value = rollout_return(mdp, _stay(mdp), 10, 50, gamma=0.99, seed=0)
    assert value == pytest.approx((1 - 0.99 ** 50) / (1 - 0.99), abs=1e-9)
    assert value == pytest.approx(39.499, abs=1e-3)


def test_expert_rollouts_match_exact_return():
    mdp = build_gridworld(4, gamma=0.9)
    pi = expert_policy(mdp)
    r = run_rollouts(mdp, pi, 2000, 300, seed=1)
    se = r.returns.std(ddof=1) / math.sqrt(2000)
    assert abs(r.returns.mean() - discounted_return_exact(mdp, pi)) <= 3 * se


def test_expert_succeeds_everywhere():
    mdp = build_gridworld(5)
    assert success_rate(mdp, expert_policy(mdp), 500, 50, seed=0) == 1.0
    assert final_distance(mdp, expert_policy(mdp), 500, 50, seed=0) == 0.0


def test_random_policy_success_is_strictly_between():
    mdp = build_gridworld(5)
    rate = success_rate(mdp, uniform_policy(mdp), 2000, 50, seed=3)
    assert 0.0 < rate < 1.0


def test_stationary_policy_distance_to_corners():
    mdp = build_gridworld(5, initial=np.eye(25)[12])
    assert final_distance(mdp, _stay(mdp), 300, 50, seed=0) == 4.0
    mdp = build_gridworld(5, initial=np.eye(25)[1])
    # from cell (0, 1): corners at 1, 3, 5 and 7 steps
    dist = goal_distances(mdp)[1, [0, 4, 20, 24]]
    np.testing.assert_array_equal(dist, [1, 3, 5, 7])


def test_metrics_are_consistent_on_shared_rollouts():
    mdp = build_gridworld(4, slip=0.2)
    metrics = evaluate(mdp, uniform_policy(mdp), 500, 20, seed=4)
    assert 0.0 <= metrics["success"] <= 1.0 and metrics["distance"] >= 0.0
    r = run_rollouts(mdp, uniform_policy(mdp), 500, 20, seed=4)
    dist = goal_distances(mdp)[r.final_states, r.goals]
    assert np.all((dist == 0) == (mdp.phi[r.final_states] == r.goals))


def test_rollouts_are_deterministic():
    mdp = build_gridworld(4, slip=0.3)
    a = run_rollouts(mdp, uniform_policy(mdp), 100, 10, seed=9)
    b = run_rollouts(mdp, uniform_policy(mdp), 100, 10, seed=9)
    np.testing.assert_array_equal(a.returns, b.returns)


def test_mann_whitney_examples():
    assert mann_whitney_u([3, 3, 3], [3, 3, 3]) == 1.0
    p = mann_whitney_u(range(1, 11), range(11, 21))
    assert p == pytest.approx(2 / math.comb(20, 10), rel=1e-9)
    a, b = [1.2, 3.4, 2.2, 5.0, 0.1], [2.0, 2.5, 4.4, 6.1, 7.3, 1.0]
    assert mann_whitney_u(a, b) == mann_whitney_u(b, a)
    with pytest.raises(ValidationError):
        mann_whitney_u([], [1.0])


def test_mann_whitney_large_samples_use_normal_approximation():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=30), rng.normal(0.8, size=30)
    p = mann_whitney_u(a, b)
    assert 0.0 < p < 0.05


def test_report_std_and_validation():
    report = EvalReport({"return": [3.0]}, n_episodes=10, horizon=5)
    assert report.std("return") == 0.0
    assert EvalReport({"return": [2.0, 2.0]}).std("return") == 0.0
    with pytest.raises(ValidationError):
        EvalReport({"return": [1.0], "success": [1.0, 0.0]})


def _rows(values_by_agent, env="grid", setting="base", metric="return"):
    return [{"env": env, "agent": agent, "setting": setting, "seed": i, "metric": metric,
             "value": v}
            for agent, values in values_by_agent.items() for i, v in enumerate(values)]


def test_aggregate_stars_only_significant_best():
    clear = aggregate(_rows({"a": [10, 11, 12, 13, 14], "b": [1, 2, 3, 4, 5]}))
    best = next(r for r in clear if r["agent"] == "a")
    assert best["star"] and not next(r for r in clear if r["agent"] == "b")["star"]
    close = aggregate(_rows({"a": [1, 5, 3, 4, 2.5], "b": [2, 3, 4, 1, 3.5]}))
    assert not any(r["star"] for r in close)
    single = aggregate(_rows({"a": [7.0]}))
    assert single[0]["std"] == 0.0 and not single[0]["star"]


def test_relative_drop():
    assert relative_drop(8.0, 10.0) == pytest.approx(-0.2)
    with pytest.raises(ValidationError):
        relative_drop(1.0, 0.0)


def test_csv_is_rfc4180_and_stable():
    rows = _rows({"smore": [1.5, 2.25]}, env='grid,"5"')
    text = write_rows_csv(rows)
    assert text.startswith("env,agent,setting,seed,metric,value\r\n")
    assert '"grid,""5"""' in text
    assert write_rows_csv(rows) == text


def test_markdown_layout():
    table = markdown_table(aggregate(_rows({"a": [10, 11, 12, 13, 14], "b": [1, 2, 3, 4, 5]})))
    lines = table.splitlines()
    assert lines[0] == "| env | setting | a | b |"
    assert "**12.00 ± 1.41**\\*" in lines[2]
