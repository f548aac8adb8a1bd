"""Chebyshev-series approximations used by the estimators.

Two families are built here:

* the amplifying polynomial ``A_{eta->delta}``, a bounded step-like polynomial
  derived from a truncated Chebyshev/Bessel expansion of ``erf(k x)``;
* the Jacobi-Anger partial sums of ``cos(t x)`` and ``sin(t x)``.

Degree calculators work from analytic truncation bounds so they stay valid at
error targets far below double precision (for example 1e-30).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as npcheb
from scipy.optimize import brentq
from scipy.special import erfc, jv, lambertw

from .numerics import InvalidInputError, RangeError, bessel_i_scaled

_PARITIES = ("even", "odd", "none")


@dataclass(frozen=True)
class ChebyshevSeries:
    """Real Chebyshev series ``sum_k coeffs[k] T_k(y)``.

    ``domain`` is the interval mapped affinely onto ``[-1, 1]`` before the
    Chebyshev polynomials are evaluated, so a series over ``[0, 1]`` is a
    function of ``y = 2x - 1``.
    """

    coeffs: np.ndarray
    parity: str = "none"
    domain: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise InvalidInputError("coefficients must be a non-empty vector")
        if self.parity not in _PARITIES:
            raise InvalidInputError(f"unknown parity {self.parity!r}")
        if self.parity == "even" and np.any(c[1::2] != 0):
            raise InvalidInputError("even series has odd-index coefficients")
        if self.parity == "odd" and np.any(c[0::2] != 0):
            raise InvalidInputError("odd series has even-index coefficients")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        nz = np.nonzero(self.coeffs)[0]
        return int(nz[-1]) if nz.size else 0

    def _to_unit(self, x):
        lo, hi = self.domain
        return (2.0 * np.asarray(x, dtype=float) - (lo + hi)) / (hi - lo)

    def __call__(self, x):
        """Evaluate with the Clenshaw recurrence (via numpy's chebval)."""
        return npcheb.chebval(self._to_unit(x), self.coeffs)

    def direct_sum(self, x):
        """Evaluate as an explicit sum of ``c_k T_k``; used for cross-checks."""
        y = np.clip(self._to_unit(x), -1.0, 1.0)
        k = np.arange(self.coeffs.size)
        theta = np.arccos(y)
        return np.cos(np.multiply.outer(theta, k)) @ self.coeffs

    def of_square(self) -> "ChebyshevSeries":
        """Series for ``x -> self(x**2)`` on ``[-1, 1]``.

        Only defined for series over ``[0, 1]``: there ``y = 2x^2 - 1 = T_2(x)``
        and ``T_j(T_2(x)) = T_{2j}(x)``, so the coefficients simply spread onto
        even indices with no loss of accuracy.
        """
        if tuple(self.domain) != (0.0, 1.0):
            raise InvalidInputError("of_square requires a series over [0, 1]")
        c = np.zeros(2 * self.coeffs.size - 1)
        c[0::2] = self.coeffs
        return ChebyshevSeries(c, "even")


@dataclass(frozen=True)
class ComposedPolynomial:
    """Pointwise composition ``outer(inner(x)**2)``.

    ``outer`` is a series over ``[0, 1]`` and ``inner`` an even series over
    ``[-1, 1]``; the result is even with degree ``2 deg(outer) deg(inner)``.
    The composition is never expanded into coefficients.
    """

    outer: ChebyshevSeries
    inner: ChebyshevSeries
    parity: str = field(default="even", init=False)

    def __post_init__(self):
        if tuple(self.outer.domain) != (0.0, 1.0):
            raise InvalidInputError("outer series must live on [0, 1]")
        if self.inner.parity != "even":
            raise InvalidInputError("inner series must be even")

    @property
    def degree(self) -> int:
        return 2 * self.outer.degree * self.inner.degree

    def __call__(self, x):
        return self.outer(self.inner(x) ** 2)


@dataclass(frozen=True)
class DegreeBudget:
    """Parameters certifying an amplifying polynomial.

    ``erf_error`` bounds ``|erf(k y) - sign(y)|`` for ``|y| >= 2 eta`` and
    ``tail_bound`` bounds the truncation error of the Chebyshev expansion.
    """

    eta: float
    delta: float
    degree_M: int
    k_param: float
    erf_error: float
    tail_bound: float


def _check_eta_delta(eta: float, delta: float) -> None:
    if not (0.0 < eta < 0.5):
        raise InvalidInputError(f"eta must lie in (0, 1/2), got {eta}")
    if not (0.0 < delta < 0.5):
        raise InvalidInputError(f"delta must lie in (0, 1/2), got {delta}")
    if delta < 1e-280:
        raise RangeError("delta below the double-precision tail resolution")


def width_parameter(eta: float, delta: float) -> float:
    """Width ``k`` of ``erf(k y)`` so that the sign error is at most delta/2.

    ``k = (sqrt(2) / (4 eta)) sqrt(ln(8 / (pi delta^2)))``; with this choice
    ``erfc(2 eta k) <= delta / 2`` on the region ``|y| >= 2 eta``.
    """
    _check_eta_delta(eta, delta)
    return math.sqrt(2.0) / (4.0 * eta) * math.sqrt(math.log(8.0 / (math.pi * delta * delta)))


def _tail_terms(k: float, jmax: int) -> np.ndarray:
    """Magnitudes of the ``j = 1..jmax`` terms of the erf expansion."""
    beta = k * k / 2.0
    j = np.arange(1, jmax + 1, dtype=float)
    return 2.0 * k / math.sqrt(math.pi) * bessel_i_scaled(j, beta) * (1.0 / (2 * j + 1) + 1.0 / (2 * j - 1))


@lru_cache(maxsize=4096)
def _budget(eta: float, delta: float) -> DegreeBudget:
    k = width_parameter(eta, delta)
    erf_err = float(erfc(2.0 * eta * k))
    beta = k * k / 2.0
    # e^{-beta} I_j(beta) ~ exp(-j^2 / (2 beta)); this comfortably covers the tail.
    jmax = int(math.ceil(math.sqrt(2.0 * beta * (math.log(1.0 / delta) + 50.0)))) + 64
    while True:
        terms = _tail_terms(k, jmax)
        if not np.all(np.isfinite(terms)):
            raise RangeError(f"Bessel tail is not finite at eta={eta}, delta={delta}")
        if terms[-1] < 1e-3 * delta * 2.0 ** -60:
            break
        jmax *= 2
    # tails[J] = sum_{j > J} terms_j, with terms indexed from j = 1.
    tails = np.concatenate([np.cumsum(terms[::-1])[::-1], [0.0]])
    ok = np.nonzero(tails <= delta / 2.0)[0]
    J = int(ok[0])
    return DegreeBudget(eta, delta, 2 * J + 1, k, erf_err, float(tails[J]))


def degree_budget(eta: float, delta: float) -> DegreeBudget:
    """Certified degree budget for ``A_{eta->delta}``.

    The degree is the smallest odd ``M = 2J + 1`` whose Bessel tail bound is at
    most ``delta/2``. Together with ``erfc(2 eta k) <= delta/2`` this gives
    ``|p_sgn - sign| <= delta`` away from the transition and ``|p_sgn| <= 1 +
    delta/2`` everywhere on ``[-1, 1]``, which are exactly the conditions the
    amplifying polynomial needs.
    """
    return _budget(float(eta), float(delta))


def degree_M(eta: float, delta: float) -> int:
    """Degree of ``A_{eta->delta}`` as certified by :func:`degree_budget`."""
    return degree_budget(eta, delta).degree_M


def sign_poly(eta: float, delta: float) -> tuple[ChebyshevSeries, DegreeBudget]:
    """Odd polynomial approximating ``sign(y)`` outside ``(-2 eta, 2 eta)``."""
    budget = degree_budget(eta, delta)
    k = budget.k_param
    beta = k * k / 2.0
    J = (budget.degree_M - 1) // 2
    pref = 2.0 * k / math.sqrt(math.pi)
    c = np.zeros(2 * J + 2)
    c[1] = pref * bessel_i_scaled(0, beta)
    for j in range(1, J + 1):
        w = pref * bessel_i_scaled(j, beta) * (-1) ** j
        c[2 * j + 1] += w / (2 * j + 1)
        c[2 * j - 1] -= w / (2 * j - 1)
    return ChebyshevSeries(c, "odd"), budget


def amplifying_poly(eta: float, delta: float) -> tuple[ChebyshevSeries, DegreeBudget]:
    """Amplifying polynomial ``A(x) = 1/2 - p_sgn(2x - 1) / (2 (1 + delta/2))``.

    The returned series lives on ``[0, 1]``. It satisfies ``0 <= A <= 1`` there,
    ``A >= 1 - delta`` on ``[0, 1/2 - eta]`` and ``A <= delta`` on
    ``[1/2 + eta, 1]``. Use :meth:`ChebyshevSeries.of_square` for ``A(x^2)``.
    """
    sgn, budget = sign_poly(eta, delta)
    c = -np.asarray(sgn.coeffs) / (2.0 * (1.0 + delta / 2.0))
    c[0] += 0.5
    return ChebyshevSeries(c, "none", (0.0, 1.0)), budget


def solve_r(t_prime: float, eps_prime: float) -> float:
    """Root ``r > t'`` of ``eps' = (t'/r)^r``.

    Writing ``u = r/t'`` the equation becomes ``u ln u = ln(1/eps')/t'`` whose
    solution is ``ln u = W(ln(1/eps')/t')`` with ``W`` the principal Lambert
    function. A few Newton steps polish the root to near machine precision.
    """
    if not t_prime > 0:
        raise InvalidInputError("t' must be positive")
    if not (0.0 < eps_prime < 1.0):
        raise InvalidInputError("eps' must lie in (0, 1)")
    L = math.log(1.0 / eps_prime)
    r = t_prime * math.exp(float(np.real(lambertw(L / t_prime))))
    for _ in range(3):
        f = r * math.log(r / t_prime) - L
        fp = math.log(r / t_prime) + 1.0
        r -= f / fp
    return r


def solve_r_bisect(t_prime: float, eps_prime: float) -> float:
    """Bracketing reference solver for :func:`solve_r`."""
    L = math.log(1.0 / eps_prime)
    hi = 2.0 * t_prime + L + 1.0
    while hi * math.log(hi / t_prime) < L:
        hi *= 2.0
    return brentq(lambda r: r * math.log(r / t_prime) - L, t_prime, hi, xtol=1e-15, rtol=1e-15)


def jacobi_anger_terms(t: float, eps: float) -> int:
    """Number of even terms ``R = floor(r(e t / 2, 5 eps / 4) / 2)``."""
    if not t > 0:
        raise InvalidInputError("t must be positive")
    if not (0.0 < eps < 1.0 / math.e):
        raise InvalidInputError("eps must lie in (0, 1/e)")
    return int(math.floor(solve_r(math.e * t / 2.0, 1.25 * eps) / 2.0))


def jacobi_anger_cos(t: float, eps: float, terms: int | None = None) -> ChebyshevSeries:
    """Even Chebyshev partial sum of ``cos(t x)`` accurate to ``eps`` on [-1, 1].

    ``cos(t x) = J_0(t) + 2 sum_k (-1)^k J_{2k}(t) T_{2k}(x)``, truncated after
    ``R`` terms. ``terms`` may raise ``R`` above the certified minimum, which
    only improves accuracy.
    """
    R = jacobi_anger_terms(t, eps)
    if terms is not None:
        if terms < R:
            raise InvalidInputError(f"terms={terms} is below the certified {R}")
        R = terms
    c = np.zeros(2 * R + 1)
    c[0] = jv(0, t)
    kk = np.arange(1, R + 1)
    c[2 * kk] = 2.0 * (-1.0) ** kk * jv(2 * kk, t)
    return ChebyshevSeries(c, "even")


def jacobi_anger_sin(t: float, eps: float) -> ChebyshevSeries:
    """Odd Chebyshev partial sum of ``sin(t x)`` with the same term count.

    ``sin(t x) = 2 sum_{k>=0} (-1)^k J_{2k+1}(t) T_{2k+1}(x)``.
    """
    R = jacobi_anger_terms(t, eps)
    c = np.zeros(2 * R + 2)
    kk = np.arange(0, R + 1)
    c[2 * kk + 1] = 2.0 * (-1.0) ** kk * jv(2 * kk + 1, t)
    return ChebyshevSeries(c, "odd")


def constraint_violation(A: ChebyshevSeries, eta: float, delta: float, points: int = 10_000) -> float:
    """Largest violation of the amplifying constraints on dense grids.

    Returns ``max(0, worst excess)`` over three grids: ``[0, 1/2 - eta]`` (needs
    ``A >= 1 - delta``), ``[1/2 + eta, 1]`` (needs ``A <= delta``) and ``[0, 1]``
    (needs ``0 <= A <= 1``).
    """
    lo = np.linspace(0.0, 0.5 - eta, points)
    hi = np.linspace(0.5 + eta, 1.0, points)
    full = np.linspace(0.0, 1.0, points)
    a_lo, a_hi, a_full = A(lo), A(hi), A(full)
    worst = max(
        float(np.max((1.0 - delta) - a_lo)),
        float(np.max(a_hi - delta)),
        float(np.max(-a_full)),
        float(np.max(a_full - 1.0)),
    )
    return max(0.0, worst)
