"""Closed-form query counts for textbook and coherent iterative estimators.

These are evaluated from formulas only; nothing here builds matrices. The
estimators module derives the same counts from the objects it constructs,
and the tests check that the two agree exactly wherever simulation is
possible.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .numerics import InvalidInputError
from .polynomials import degree_M, solve_r

ALGORITHMS = ("textbook_pe", "improved_pe", "textbook_ee", "improved_ee")
CSV_COLUMNS = ("algorithm", "n", "alpha", "delta", "queries", "garbage_qubits",
               "ancillas", "speedup_vs_textbook")


@dataclass(frozen=True)
class CostReport:
    algorithm: str
    n: int
    alpha: float
    delta: float
    queries: int
    garbage_qubits: int
    ancilla_qubits: int

    def to_dict(self) -> dict:
        return asdict(self)


def _validate(n: int, alpha: float, delta: float) -> None:
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidInputError("n must be a positive integer")
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError("alpha must lie in (0, 1)")
    if not 0.0 < delta < 1.0:
        raise InvalidInputError("delta must lie in (0, 1)")


def _median_repetitions(n: int, alpha: float, delta: float) -> tuple[int, int]:
    """Extra bits ``r`` and copies ``M`` of median-amplified phase estimation."""
    delta_med = delta**2 / 6.25
    if alpha <= 0.5:
        r = math.ceil(math.log2(1.0 / (2.0 * alpha)))
        eta = 8.0 / math.pi**2 - 0.5
    else:
        r = 0
        x = (1.0 - alpha) / 2.0
        eta = (math.sin(math.pi * x) / (math.pi * x)) ** 2 - 0.5 if x > 0 else 0.5
    return r, math.ceil(math.log(1.0 / delta_med) / (2.0 * eta**2))


def _eta(k: int, alpha: float, gap_rule: str) -> float:
    w = 2.0**-k * (0.5 + alpha / 2.0)
    if gap_rule == "exact":
        return math.sin(math.pi * alpha / 2.0) / 2.0 if k == 0 else math.cos(math.pi * w) / 2.0
    if gap_rule == "linear":
        return alpha / 2.0 if k == 0 else 0.5 - w
    raise InvalidInputError(f"unknown gap rule {gap_rule!r}")


def cost_textbook_pe(n: int, alpha: float, delta: float) -> CostReport:
    """``(2^{n+r} - 1) M`` controlled-U calls with ``(n + r) M`` garbage qubits."""
    _validate(n, alpha, delta)
    r, M = _median_repetitions(n, alpha, delta)
    N = n + r
    return CostReport("textbook_pe", n, alpha, delta, (2**N - 1) * M, N * M, 0)


def cost_improved_pe(n: int, alpha: float, delta: float, m_svt: float = 3,
                     uncompute: bool = False, gap_rule: str = "exact") -> CostReport:
    """``sum_k 2^{n-k} M_{eta_k -> delta_amp,k}`` with ``delta_k = delta 2^{-k-1}``.

    With ``uncompute`` the whole estimator is built at ``delta/2`` and run
    twice.
    """
    _validate(n, alpha, delta)
    base = delta / 2.0 if uncompute else delta
    total = 0
    for k in range(n):
        d_amp = (1.0 - 10.0**-m_svt) * (base * 2.0 ** (-k - 1)) ** 2 / 8.0
        total += 2 ** (n - k) * degree_M(_eta(k, alpha, gap_rule), d_amp)
    if uncompute:
        total *= 2
    return CostReport("improved_pe", n, alpha, delta, total, 0, 1)


def hamsim_queries(t: float, eps: float) -> int:
    """Hamiltonian-simulation cost ``3 floor(r(e t/2, eps/24)) + 3``."""
    if t == 0:
        return 0
    return 3 * int(math.floor(solve_r(math.e * abs(t) / 2.0, eps / 24.0))) + 3


def cost_textbook_ee(n: int, alpha: float, delta: float, a: int = 1) -> CostReport:
    """Phase estimation on ``exp(2 pi i H)`` with simulated controlled powers.

    Half of ``delta`` goes to phase estimation and half to simulation; the
    simulation share is spread evenly over all ``M (2^N - 1)`` unit time
    steps, so the power ``2^j`` gets ``2^j`` shares.
    """
    _validate(n, alpha, delta)
    r, M = _median_repetitions(n, alpha, delta / 2.0)
    N = n + r
    per_step = (delta / 2.0) / (M * (2**N - 1))
    per_copy = sum(hamsim_queries(2.0 * math.pi * 2**j, per_step * 2**j) for j in range(N))
    return CostReport("textbook_ee", n, alpha, delta, M * per_copy, N * M, a + 1)


def cost_improved_ee(n: int, alpha: float, delta: float, a: int = 1, m_cos: float = 3,
                     m_svt: float = 3, gap_rule: str = "exact") -> CostReport:
    """Per-bit energy estimation with per-bit uncomputation.

    Bit ``k`` costs ``2 * 4 M floor(r)`` with ``M`` the amplifying degree at gap
    ``(1 - 10^-m_cos) eta_k`` and error ``(1 - 10^-m_svt)(delta 2^{-k-1}/2)^2/8``
    and ``r = r(e pi 2^{n-k}/2, (5/4)(eta_k/2) 10^-m_cos)``.
    """
    _validate(n, alpha, delta)
    total = 0
    for k in range(n):
        eta = _eta(k, alpha, gap_rule)
        d_amp = (1.0 - 10.0**-m_svt) * (delta * 2.0 ** (-k - 1) / 2.0) ** 2 / 8.0
        M = degree_M((1.0 - 10.0**-m_cos) * eta, d_amp)
        r = solve_r(math.e * math.pi * 2 ** (n - k) / 2.0, 1.25 * (eta / 2.0) * 10.0**-m_cos)
        total += 2 * 4 * M * int(math.floor(r))
    return CostReport("improved_ee", n, alpha, delta, total, 0, a + n + 3)


COST_FUNCTIONS = {
    "textbook_pe": cost_textbook_pe,
    "improved_pe": cost_improved_pe,
    "textbook_ee": cost_textbook_ee,
    "improved_ee": cost_improved_ee,
}
BASELINE = {"textbook_pe": "textbook_pe", "improved_pe": "textbook_pe",
            "textbook_ee": "textbook_ee", "improved_ee": "textbook_ee"}


def speedup(kind: str, n: int, alpha: float, delta: float) -> float:
    """Textbook cost divided by the coherent iterative cost (``kind`` is ``pe`` or ``ee``)."""
    if kind == "pe":
        return cost_textbook_pe(n, alpha, delta).queries / cost_improved_pe(n, alpha, delta).queries
    if kind == "ee":
        return cost_textbook_ee(n, alpha, delta).queries / cost_improved_ee(n, alpha, delta).queries
    raise InvalidInputError("kind must be 'pe' or 'ee'")


def sweep(points, algorithms=ALGORITHMS) -> list[dict]:
    """Cost rows for every ``(n, alpha, delta)`` point and algorithm.

    Each row carries the speedup of the algorithm over its textbook baseline
    (1.0 for the baselines themselves).
    """
    rows = []
    for n, alpha, delta in points:
        cache = {}
        for alg in algorithms:
            if alg not in COST_FUNCTIONS:
                raise InvalidInputError(f"unknown algorithm {alg!r}")
            for name in (alg, BASELINE[alg]):
                if name not in cache:
                    cache[name] = COST_FUNCTIONS[name](n, alpha, delta)
            rep = cache[alg]
            rows.append({
                "algorithm": alg,
                "n": n,
                "alpha": alpha,
                "delta": delta,
                "queries": rep.queries,
                "garbage_qubits": rep.garbage_qubits,
                "ancillas": rep.ancilla_qubits,
                "speedup_vs_textbook": cache[BASELINE[alg]].queries / rep.queries,
            })
    return rows


REF_N = 10
REF_DELTA = 1e-30
REF_ALPHA = 2.0**-10


def alpha_grid() -> list[float]:
    """``alpha`` from ``2^-12`` to ``2^-1`` in quarter steps of ``log2``, then a few above 1/2."""
    lows = [2.0 ** (-12 + q / 4.0) for q in range(0, 11 * 4 + 1)]
    return lows + [0.6, 0.7, 0.8, 0.9]


def alpha_sweep_points() -> list[tuple]:
    return [(REF_N, a, REF_DELTA) for a in alpha_grid()]


def sensitivity_points() -> list[tuple]:
    """One-at-a-time variation of ``n``, ``alpha`` and ``delta`` around the reference point."""
    pts = [(n, REF_ALPHA, REF_DELTA) for n in range(1, 21)]
    pts += [(REF_N, 2.0**-j, REF_DELTA) for j in range(1, 13)]
    pts += [(REF_N, REF_ALPHA, 10.0**-e) for e in range(2, 61, 2)]
    return pts


def rows_to_csv(rows, header_comments=()) -> str:
    buf = io.StringIO()
    for line in header_comments:
        buf.write(f"# {line}\n")
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        out = dict(row)
        out["alpha"] = repr(float(row["alpha"]))
        out["delta"] = repr(float(row["delta"]))
        out["speedup_vs_textbook"] = f"{row['speedup_vs_textbook']:.6f}"
        writer.writerow(out)
    return buf.getvalue()
