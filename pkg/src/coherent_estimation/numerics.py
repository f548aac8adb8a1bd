"""Dense complex linear algebra and special functions.

Everything here is a thin, validated layer over numpy/scipy. Matrices are plain
``numpy.ndarray`` objects with complex dtype; the helpers enforce the
preconditions the rest of the package relies on (finite entries, unitarity).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.special
from scipy.stats import unitary_group

UNITARY_TOL = 1e-8


class InvalidInputError(ValueError):
    """Raised when an operation receives arguments outside its domain."""


class RangeError(OverflowError):
    """Raised when a special-function value overflows double precision."""


def as_matrix(M) -> np.ndarray:
    """Return ``M`` as a finite two-dimensional complex array."""
    A = np.asarray(M, dtype=complex)
    if A.ndim == 1:
        A = A.reshape(1, -1)
    if A.ndim != 2:
        raise InvalidInputError(f"expected a matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("matrix has non-finite entries")
    return A


def dagger(M: np.ndarray) -> np.ndarray:
    return np.conj(np.transpose(M))


def is_unitary(U, tol: float = UNITARY_TOL) -> bool:
    """True if ``U`` is square and ``||U^dag U - I|| <= tol``."""
    U = np.asarray(U, dtype=complex)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        return False
    return spectral_norm(dagger(U) @ U - np.eye(U.shape[0])) <= tol


def require_unitary(U, tol: float = UNITARY_TOL, name: str = "matrix") -> np.ndarray:
    U = as_matrix(U)
    if not is_unitary(U, tol):
        raise InvalidInputError(f"{name} is not unitary to tolerance {tol:g}")
    return U


def svd(M):
    """Singular value decomposition ``M = U diag(s) V^dag``.

    Returns ``(U, s, V)`` with ``s`` sorted in descending order. For a square
    input both ``U`` and ``V`` are unitary; for rectangular input the thin
    factors are returned.
    """
    A = as_matrix(M)
    U, s, Vh = scipy.linalg.svd(A, full_matrices=False, lapack_driver="gesvd")
    return U, s, dagger(Vh)


def eig_unitary(U, tol: float = UNITARY_TOL):
    """Eigen-decomposition of a unitary as phases in [0, 1) and an eigenbasis.

    Uses the complex Schur form, which is diagonal for normal matrices and
    always yields an orthonormal basis even when eigenvalues are degenerate.
    """
    U = require_unitary(U, tol, "U")
    T, Z = scipy.linalg.schur(U, output="complex")
    phases = np.mod(np.angle(np.diag(T)) / (2 * np.pi), 1.0)
    # angle() can return exactly pi for -1; fold values that round up to 1.
    phases[phases >= 1.0] = 0.0
    return phases, Z


def spectral_norm(M) -> float:
    """Largest singular value of ``M``."""
    A = np.asarray(M, dtype=complex)
    if A.size == 0:
        return 0.0
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("matrix has non-finite entries")
    return float(np.linalg.norm(A, 2))


def psd_sqrt(M) -> np.ndarray:
    """Square root of a hermitian positive semi-definite matrix.

    Tiny negative eigenvalues produced by round-off are clipped to zero.
    """
    A = as_matrix(M)
    A = (A + dagger(A)) / 2
    w, V = np.linalg.eigh(A)
    w = np.sqrt(np.clip(w, 0.0, None))
    return (V * w) @ dagger(V)


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary drawn from ``rng`` (deterministic given its state)."""
    if dim == 1:
        return np.exp(2j * np.pi * rng.random()) * np.ones((1, 1), dtype=complex)
    return unitary_group.rvs(dim, random_state=rng)


def random_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def partial_trace(rho: np.ndarray, dims: list[int], keep: list[int]) -> np.ndarray:
    """Trace out every tensor factor of ``rho`` whose index is not in ``keep``.

    ``dims`` lists the factor dimensions in order, most significant first.
    """
    n = len(dims)
    keep = sorted(keep)
    rho = np.asarray(rho).reshape(dims + dims)
    traced = [i for i in range(n) if i not in keep]
    # Trace the highest indices first so remaining axis positions stay valid.
    for count, i in enumerate(sorted(traced, reverse=True)):
        m = n - count
        rho = np.trace(rho, axis1=i, axis2=i + m)
    d = int(np.prod([dims[i] for i in keep])) if keep else 1
    return rho.reshape(d, d)


def bessel_j(k: int, t: float) -> float:
    """Bessel function of the first kind ``J_k(t)``."""
    if k < 0:
        raise InvalidInputError("order must be non-negative")
    return float(scipy.special.jv(k, t))


def bessel_i(k: int, t: float) -> float:
    """Modified Bessel function ``I_k(t)``; raises RangeError on overflow."""
    if k < 0:
        raise InvalidInputError("order must be non-negative")
    value = scipy.special.iv(k, t)
    if not np.isfinite(value):
        raise RangeError(f"I_{k}({t}) overflows; use bessel_i_scaled")
    return float(value)


def _ive_debye(k, t):
    """Uniform large-order expansion of ``exp(-t) I_k(t)`` for ``t > 0``.

    With ``s = 1/sqrt(k^2 + t^2)`` the first three correction terms are
    written in ``s`` and ``k`` so the formula stays finite at ``k = 0``. The
    relative error is ``O(s^4)``, far below double precision once
    ``t >= 1e8``.
    """
    k = np.asarray(k, dtype=float)
    t = float(t)
    root = np.hypot(k, t)
    s = 1.0 / root
    exponent = k * k / (root + t) - k * np.arcsinh(k / t)
    k2 = k * k
    series = (1.0
              + (3 * s - 5 * k2 * s**3) / 24.0
              + (81 * s**2 - 462 * k2 * s**4 + 385 * k2**2 * s**6) / 1152.0
              + (30375 * s**3 - 369603 * k2 * s**5 + 765765 * k2**2 * s**7
                 - 425425 * k2**3 * s**9) / 414720.0)
    return np.exp(exponent) * np.sqrt(s / (2 * np.pi)) * series


def bessel_i_scaled(k, t):
    """Exponentially scaled ``exp(-|t|) I_k(t)``, safe for large arguments.

    scipy returns NaN once ``|t|`` passes about ``2e9``; there the uniform
    large-order expansion takes over.
    """
    value = scipy.special.ive(k, t)
    bad = ~np.isfinite(value)
    if np.any(bad) and abs(float(t)) > 0:
        fallback = _ive_debye(k, abs(float(t)))
        if t < 0:
            fallback = fallback * (-1.0) ** np.asarray(k)
        value = np.where(bad, fallback, value)
        if np.ndim(value) == 0:
            value = float(value)
    return value


def chebyshev_t(k: int, x: float) -> float:
    """Chebyshev polynomial of the first kind ``T_k(x)``."""
    if k < 0:
        raise InvalidInputError("degree must be non-negative")
    return float(scipy.special.eval_chebyt(k, x))
