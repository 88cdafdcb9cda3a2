"""f-divergence catalogue: generators, derivatives, inverse derivatives, conjugates.

Each entry follows the standard table of common f-divergences (generator
``f(x)`` on ``x >= 0`` and conjugate ``f*(y) = sup_x [x y - f(x)]``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._validation import ValidationError, as_float_array

LOG2 = float(np.log(2.0))


class DomainError(ValueError):
    """An argument lies outside the domain of a catalogue function."""

    def __init__(self, divergence: str, value, domain: str, what: str = "conjugate"):
        self.divergence = divergence
        self.value = value
        self.domain = domain
        super().__init__(f"{what} of {divergence} undefined at y={value!r}; domain is {domain}")


class SupportError(ValueError):
    """P puts mass where Q has none."""

    def __init__(self, index: int, p_mass: float):
        self.index = index
        self.p_mass = p_mass
        super().__init__(f"P is not absolutely continuous w.r.t. Q: P[{index}]={p_mass:.3g} "
                         f"but Q[{index}]=0")


@dataclass(frozen=True)
class Interval:
    lo: float = -np.inf
    hi: float = np.inf
    lo_closed: bool = False
    hi_closed: bool = False

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        lo_ok = y >= self.lo if self.lo_closed else y > self.lo
        hi_ok = y <= self.hi if self.hi_closed else y < self.hi
        return lo_ok & hi_ok

    def __str__(self) -> str:
        return (f"{'[' if self.lo_closed else '('}{self.lo:g}, "
                f"{self.hi:g}{']' if self.hi_closed else ')'}")


@dataclass(frozen=True)
class FDivergence:
    name: str
    generator: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    derivative_inverse: Callable[[np.ndarray], np.ndarray]
    conjugate: Callable[[np.ndarray], np.ndarray]
    conjugate_domain: Interval
    inverse_domain: Interval
    # y-range on which the tabulated conjugate equals the sup over x >= 0
    nonnegative_sup_range: tuple[float, float]

    def __repr__(self) -> str:
        return f"FDivergence({self.name!r})"


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


def _js_generator(x):
    x = np.asarray(x, dtype=float)
    return -(x + 1.0) * np.log((x + 1.0) / 2.0) + _xlogx(x)


def _js_derivative(x):
    x = np.asarray(x, dtype=float)
    return np.log(2.0 * x / (x + 1.0))


KL_REVERSE = FDivergence(
    name="kl_reverse",
    generator=_xlogx,
    derivative=lambda x: np.log(x) + 1.0,
    derivative_inverse=lambda y: np.exp(np.asarray(y, dtype=float) - 1.0),
    conjugate=lambda y: np.exp(np.asarray(y, dtype=float) - 1.0),
    conjugate_domain=Interval(),
    inverse_domain=Interval(),
    nonnegative_sup_range=(-3.0, 2.5),
)

CHI2 = FDivergence(
    name="chi2",
    generator=lambda x: (np.asarray(x, dtype=float) - 1.0) ** 2,
    derivative=lambda x: 2.0 * (np.asarray(x, dtype=float) - 1.0),
    derivative_inverse=lambda y: np.asarray(y, dtype=float) / 2.0 + 1.0,
    conjugate=lambda y: np.asarray(y, dtype=float) + np.asarray(y, dtype=float) ** 2 / 4.0,
    conjugate_domain=Interval(),
    inverse_domain=Interval(),
    # below y = -2 the maximizer of x*y - (x-1)^2 is negative
    nonnegative_sup_range=(-2.0, 6.0),
)

TOTAL_VARIATION = FDivergence(
    name="total_variation",
    generator=lambda x: 0.5 * np.abs(np.asarray(x, dtype=float) - 1.0),
    # subgradient choice 0 at x = 1
    derivative=lambda x: 0.5 * np.sign(np.asarray(x, dtype=float) - 1.0),
    derivative_inverse=lambda y: np.ones_like(np.asarray(y, dtype=float)),
    conjugate=lambda y: np.asarray(y, dtype=float) * 1.0,
    conjugate_domain=Interval(-0.5, 0.5, True, True),
    inverse_domain=Interval(-0.5, 0.5, False, False),
    nonnegative_sup_range=(-0.5, 0.5),
)

JENSEN_SHANNON = FDivergence(
    name="jensen_shannon",
    generator=_js_generator,
    derivative=_js_derivative,
    derivative_inverse=lambda y: np.exp(y) / (2.0 - np.exp(y)),
    conjugate=lambda y: -np.log(2.0 - np.exp(np.asarray(y, dtype=float))),
    conjugate_domain=Interval(hi=LOG2),
    inverse_domain=Interval(hi=LOG2),
    nonnegative_sup_range=(-4.0, 0.5),
)

SQUARED_HELLINGER = FDivergence(
    name="squared_hellinger",
    generator=lambda x: (np.sqrt(np.asarray(x, dtype=float)) - 1.0) ** 2,
    derivative=lambda x: 1.0 - 1.0 / np.sqrt(np.asarray(x, dtype=float)),
    derivative_inverse=lambda y: 1.0 / (1.0 - np.asarray(y, dtype=float)) ** 2,
    conjugate=lambda y: np.asarray(y, dtype=float) / (1.0 - np.asarray(y, dtype=float)),
    conjugate_domain=Interval(hi=1.0),
    inverse_domain=Interval(hi=1.0),
    nonnegative_sup_range=(-3.0, 0.5),
)

CATALOGUE: dict[str, FDivergence] = {
    d.name: d for d in (KL_REVERSE, CHI2, TOTAL_VARIATION, JENSEN_SHANNON, SQUARED_HELLINGER)
}


def get_divergence(div) -> FDivergence:
    if isinstance(div, FDivergence):
        return div
    try:
        return CATALOGUE[div]
    except KeyError:
        raise ValidationError(
            f"unknown divergence {div!r}; choose from {sorted(CATALOGUE)}") from None


def _scalar_or_array(out, like):
    return float(out) if np.ndim(like) == 0 else out


def generator_value(div, x):
    """``f(x)``; defined on ``x >= 0`` (the value at 0 is the continuous extension)."""
    d = get_divergence(div)
    arr = as_float_array(x, "x")
    if np.any(arr < 0):
        raise DomainError(d.name, x, "[0, inf)", what="generator")
    return _scalar_or_array(d.generator(arr), x)


def derivative_value(div, x):
    d = get_divergence(div)
    arr = as_float_array(x, "x")
    if np.any(arr <= 0):
        raise DomainError(d.name, x, "(0, inf)", what="derivative")
    return _scalar_or_array(d.derivative(arr), x)


def conjugate_value(div, y):
    """``f*(y)``; raises :class:`DomainError` outside the finite domain."""
    d = get_divergence(div)
    arr = np.asarray(y, dtype=float)
    inside = d.conjugate_domain.contains(arr)
    if not np.all(inside):
        bad = arr[~inside].ravel()[0] if arr.ndim else float(arr)
        raise DomainError(d.name, float(bad), str(d.conjugate_domain))
    return _scalar_or_array(d.conjugate(arr), y)


def derivative_inverse(div, y):
    """``(f')^{-1}(y)``, which equals the derivative of the conjugate."""
    d = get_divergence(div)
    arr = np.asarray(y, dtype=float)
    inside = d.inverse_domain.contains(arr)
    if not np.all(inside):
        bad = arr[~inside].ravel()[0] if arr.ndim else float(arr)
        raise DomainError(d.name, float(bad), str(d.inverse_domain), what="derivative inverse")
    return _scalar_or_array(d.derivative_inverse(arr), y)


def divergence(div, p, q) -> float:
    """``D_f(P || Q) = sum_i Q_i f(P_i / Q_i)`` with ``0 * f(0/0) = 0``."""
    d = get_divergence(div)
    p = as_float_array(p, "P").ravel()
    q = as_float_array(q, "Q").ravel()
    if p.shape != q.shape:
        raise ValidationError(f"P and Q are not aligned: {p.shape} vs {q.shape}")
    off = (q <= 0) & (p > 0)
    if np.any(off):
        i = int(np.flatnonzero(off)[0])
        raise SupportError(i, float(p[i]))
    on = q > 0
    ratio = p[on] / q[on]
    return float(np.sum(q[on] * d.generator(ratio)))


def entropy(p) -> float:
    p = np.asarray(p, dtype=float).ravel()
    return float(-np.sum(_xlogx(p)))
