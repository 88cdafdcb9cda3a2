import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smore_lab._validation import ValidationError
from smore_lab.divergence import (
    CATALOGUE, DomainError, SupportError, conjugate_value, derivative_inverse,
    derivative_value, divergence, entropy, generator_value, get_divergence,
)

NAMES = sorted(CATALOGUE)
GRID = np.linspace(0.05, 10.0, 100)


@pytest.mark.parametrize("name", NAMES)
def test_generator_vanishes_at_one(name):
    assert generator_value(name, 1.0) == 0.0


@pytest.mark.parametrize("name", NAMES)
def test_generator_is_convex(name):
    x = np.linspace(0.05, 10.0, 400)
    f = get_divergence(name).generator(x)
    assert np.min(f[:-2] - 2 * f[1:-1] + f[2:]) >= -1e-9


@pytest.mark.parametrize("name", [n for n in NAMES if n != "total_variation"])
def test_fenchel_young_equality_on_grid(name):
    f = get_divergence(name)
    y = f.derivative(GRID)
    gap = np.abs(f.conjugate(y) - (GRID * y - f.generator(GRID)))
    assert gap.max() < 1e-9


def test_total_variation_fenchel_young_on_subgradients():
    f = get_divergence("total_variation")
    x = GRID[np.abs(GRID - 1.0) > 1e-12]
    y = f.derivative(x)
    assert np.max(np.abs(f.conjugate(y) - (x * y - f.generator(x)))) < 1e-9


@pytest.mark.parametrize("name", [n for n in NAMES if n != "total_variation"])
def test_conjugate_derivative_is_inverse_derivative(name):
    f = get_divergence(name)
    lo, hi = f.nonnegative_sup_range
    y = np.linspace(lo, hi, 50)
    h = 1e-5
    numeric = (f.conjugate(y + h) - f.conjugate(y - h)) / (2 * h)
    np.testing.assert_allclose(numeric, f.derivative_inverse(y), rtol=0, atol=1e-7)


@pytest.mark.parametrize("name", NAMES)
def test_biconjugation_by_grid_search(name):
    f = get_divergence(name)
    rng = np.random.default_rng(0)
    lo, hi = f.nonnegative_sup_range
    xs = np.concatenate([np.linspace(0, 50, 400_001), [1.0]])
    fx = f.generator(xs)
    for y in rng.uniform(lo, hi, size=20):
        assert np.max(xs * y - fx) == pytest.approx(float(f.conjugate(y)), abs=1e-4)


def test_table_values():
    assert generator_value("chi2", 3.0) == pytest.approx(4.0)
    assert generator_value("kl_reverse", np.e) == pytest.approx(np.e)
    assert conjugate_value("chi2", 2.0) == pytest.approx(3.0)
    assert conjugate_value("kl_reverse", 1.0) == pytest.approx(1.0)
    assert derivative_inverse("chi2", 0.0) == 1.0
    assert derivative_inverse("chi2", 2.0) == 2.0
    assert derivative_inverse("kl_reverse", 1.0) == pytest.approx(1.0)
    assert derivative_value("chi2", 2.0) == 2.0


def test_domain_errors_name_the_divergence():
    with pytest.raises(DomainError) as info:
        conjugate_value("total_variation", 0.7)
    assert info.value.divergence == "total_variation" and info.value.value == 0.7
    with pytest.raises(DomainError):
        conjugate_value("jensen_shannon", 1.0)
    with pytest.raises(DomainError):
        derivative_inverse("squared_hellinger", 1.5)
    with pytest.raises(DomainError):
        generator_value("chi2", -0.1)
    with pytest.raises(ValidationError):
        get_divergence("renyi")


def test_two_point_examples():
    p, q = np.array([0.5, 0.5]), np.array([0.25, 0.75])
    assert divergence("chi2", p, q) == pytest.approx(1 / 3, abs=1e-12)
    expected = 0.5 * np.log(2.0) + 0.5 * np.log(2.0 / 3.0)
    assert divergence("kl_reverse", p, q) == pytest.approx(expected, abs=1e-12)


def test_support_violation_reports_index():
    with pytest.raises(SupportError) as info:
        divergence("chi2", [0.2, 0.8, 0.0], [0.5, 0.0, 0.5])
    assert info.value.index == 1


def test_zero_over_zero_convention():
    assert divergence("kl_reverse", [1.0, 0.0], [1.0, 0.0]) == 0.0
    with pytest.raises(ValidationError):
        divergence("chi2", [1.0], [0.5, 0.5])


def _pair(seed, size=6):
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(size)), rng.dirichlet(np.ones(size))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), name=st.sampled_from(NAMES))
def test_divergence_nonnegative(seed, name):
    p, q = _pair(seed)
    assert divergence(name, p, q) >= -1e-12
    assert divergence(name, p, p) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_chi2_upper_bounds_kl(seed):
    p, q = _pair(seed)
    assert divergence("chi2", p, q) >= divergence("kl_reverse", p, q) - 1e-9


def test_entropy_of_uniform():
    assert entropy(np.full(8, 1 / 8)) == pytest.approx(np.log(8))
