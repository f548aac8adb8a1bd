"""Property suites run by ``coherent-estimation verify``.

Each suite returns a list of :class:`Check` results. The suites are small,
seeded versions of the property tests, sized to finish in seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from . import blockenc as be
from . import costs
from . import estimators as est
from . import polynomials as poly
from .numerics import dagger, haar_unitary, partial_trace, random_state, spectral_norm

# Tolerances are module attributes so that a deliberately corrupted value can be
# injected to confirm that failures propagate to the exit status.
POLY_SLACK = 1e-10
TRACE_PRESERVING_TOL = 1e-8
COLLAPSE_TOL = 1e-8


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


def diamond_bound_suite(seed: int = 0, pairs: int = 200) -> list[Check]:
    """Unitary-channel diamond distance never exceeds twice the spectral distance."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        d = int(rng.integers(2, 17))
        U = haar_unitary(d, rng)
        if rng.random() < 0.5:
            # Nearby pairs exercise the regime where the bound is tight.
            H = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
            V = U @ expm(1j * 10.0 ** rng.uniform(-4, 0) * (H + dagger(H)) / 2)
        else:
            V = haar_unitary(d, rng)
        ratio = be.diamond_distance_unitary(U, V) / max(2 * spectral_norm(U - V), 1e-300)
        worst = max(worst, ratio)
    return [Check("diamond distance <= 2 * spectral distance", worst <= 1 + 1e-9,
                  f"worst ratio {worst:.6f} over {pairs} pairs")]


def trace_out_suite(seed: int = 0, samples: int = 50) -> list[Check]:
    """Partial trace does not increase the trace norm."""
    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(samples):
        da, db = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        X = rng.normal(size=(da * db,) * 2) + 1j * rng.normal(size=(da * db,) * 2)
        X = X + dagger(X)
        full = np.abs(np.linalg.eigvalsh(X)).sum()
        red = partial_trace(X, [da, db], [1])
        ok &= np.abs(np.linalg.eigvalsh(red)).sum() <= full + 1e-9
    return [Check("trace norm contracts under partial trace", bool(ok), f"{samples} samples")]


def polynomial_suite(points: int = 10_000) -> list[Check]:
    """Amplifying and Jacobi-Anger polynomials meet their accuracy targets."""
    out = []
    worst = 0.0
    for eta in (0.05, 0.1, 0.15, 0.2, 0.25):
        for delta in (1e-2, 1e-4, 1e-6, 1e-8):
            A, _ = poly.amplifying_poly(eta, delta)
            worst = max(worst, poly.constraint_violation(A, eta, delta, points))
    out.append(Check("amplifying polynomial constraints", worst <= POLY_SLACK,
                     f"worst violation {worst:.3e}"))
    x = np.linspace(-1, 1, points)
    worst_ratio = 0.0
    for t in (math.pi, 2 * math.pi, 8 * math.pi, 64 * math.pi):
        for eps in (1e-3, 1e-6, 1e-9):
            ec = np.max(np.abs(poly.jacobi_anger_cos(t, eps)(x) - np.cos(t * x)))
            es = np.max(np.abs(poly.jacobi_anger_sin(t, eps)(x) - np.sin(t * x)))
            worst_ratio = max(worst_ratio, ec / eps, es / eps)
    out.append(Check("Jacobi-Anger error <= eps", worst_ratio <= 1.0,
                     f"worst error/eps {worst_ratio:.3e}"))
    return out


def perturbed_projector(d: int, rank: int, eps: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Hermitian ``A`` with ``||A^2 - Pi|| = eps`` for a random rank-``rank`` projector."""
    B = haar_unitary(d, rng)
    ones = np.zeros(d)
    ones[:rank] = 1.0
    a = np.where(ones == 1.0, math.sqrt(1.0 - eps), math.sqrt(eps))
    a[rng.random(d) < 0.5] *= -1.0
    return (B * a) @ dagger(B), (B * ones) @ dagger(B)


def block_measure_distance(A: np.ndarray, Pi: np.ndarray) -> tuple[float, float]:
    """Diamond-distance bounds between block measurement of ``A`` and the ideal one for ``Pi``.

    Both channels start with the flag in ``|0>``.
    """
    actual = be.block_measure(be.dilate(A))
    return be.diamond_norm_bounds(actual, be.ideal_block_measure(Pi),
                                  be.flag_zero_isometry(A.shape[0]))


def block_measure_suite(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    for eps in (1e-1, 1e-2, 1e-3):
        A, Pi = perturbed_projector(4, 2, eps, rng)
        lower, upper = block_measure_distance(A, Pi)
        out.append(Check(f"block measurement within 4*sqrt(2)*eps at eps={eps:g}",
                         lower <= upper + 1e-12 and upper <= 4 * math.sqrt(2) * eps,
                         f"diamond distance in [{lower:.3e}, {upper:.3e}]"))
    return out


def collapse_suite(seed: int = 0) -> list[Check]:
    """Flag marginal equals ``|g|^2 |1><1| + (1 - |g|^2) |0><0|`` on eigenstates."""
    rng = np.random.default_rng(seed)
    d = 4
    B = haar_unitary(d, rng)
    g = rng.uniform(-1, 1, size=d)
    enc = be.dilate((B * g) @ dagger(B))
    ch = be.block_measure(enc)
    worst = 0.0
    for j in range(d):
        psi = np.kron([1.0, 0.0], B[:, j])
        rho = ch.apply_pure(psi)
        flag = partial_trace(rho, [2, d], [0])
        want = np.diag([1 - g[j] ** 2, g[j] ** 2])
        worst = max(worst, float(np.max(np.abs(flag - want))))
    return [Check("collapse statistics of block measurement", worst <= COLLAPSE_TOL,
                  f"max deviation {worst:.2e}")]


def hamsim_suite(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    for t, eps in ((1.0, 1e-2), (math.pi, 1e-3), (5.0, 1e-1)):
        d = 4
        B = haar_unitary(d, rng)
        H = (B * rng.uniform(-1, 1, size=d)) @ dagger(B)
        enc, target = est.hamsim_encoding(be.dilate(H, queries=1), t, eps)
        ch, bound = be.channel_from_block(enc, target)
        A = be.encoded_block(enc)
        psi = random_state(d, rng)
        success = float(np.linalg.norm(A @ psi) ** 2)
        out.append(Check(f"Hamiltonian simulation t={t:g} eps={eps:g}",
                         bound <= eps and success >= 1 - 2 * eps + eps**2
                         and ch.is_trace_preserving(TRACE_PRESERVING_TOL),
                         f"bound {bound:.2e}, success {success:.6f}"))
    return out


def estimator_suite(seed: int = 0) -> list[Check]:
    """Promise soundness, coherence and query accounting on a few small instances."""
    out = []
    n, alpha, delta = 3, 0.3, 0.05
    worst, fid, match = 1.0, 1.0, True
    for s in range(seed, seed + 3):
        inst = est.gen_instance(n, alpha, 4, s)
        _, rep = est.improved_pe(inst, delta)
        ch, rep_u = est.improved_pe(inst, delta, uncompute_output=True)
        worst = min(worst, min(rep.per_eigenstate_success))
        fid = min(fid, rep_u.coherence_fidelity)
        match &= rep.query_count == costs.cost_improved_pe(n, alpha, delta).queries
        match &= rep_u.query_count == costs.cost_improved_pe(n, alpha, delta, uncompute=True).queries
        match &= ch.is_trace_preserving(TRACE_PRESERVING_TOL)
    out.append(Check("phase estimation success >= 1 - delta", worst >= 1 - delta, f"min {worst:.6f}"))
    out.append(Check("uncomputed phase estimation stays coherent", fid >= 1 - delta, f"min {fid:.6f}"))
    out.append(Check("phase estimation queries match cost formula", bool(match)))
    h = est.gen_instance(2, alpha, 2, seed, "hamiltonian")
    _, rep = est.improved_ee(h, 0.1)
    out.append(Check("energy estimation success >= 1 - delta",
                     min(rep.per_eigenstate_success) >= 0.9,
                     f"min {min(rep.per_eigenstate_success):.6f}"))
    out.append(Check("energy estimation queries match cost formula",
                     rep.query_count == costs.cost_improved_ee(2, alpha, 0.1).queries))
    return out


SUITES = {
    "diamond_bound": diamond_bound_suite,
    "trace_out": trace_out_suite,
    "polynomials": polynomial_suite,
    "block_measure": block_measure_suite,
    "collapse": collapse_suite,
    "hamsim": hamsim_suite,
    "estimators": estimator_suite,
}


def run_suites(names=None, seed: int = 0) -> dict[str, list[Check]]:
    names = list(SUITES) if not names else list(names)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s): {', '.join(unknown)}")
    results = {}
    for name in names:
        fn = SUITES[name]
        results[name] = fn() if name == "polynomials" else fn(seed=seed)
    return results
