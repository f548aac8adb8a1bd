"""Command-line interface: ``coherent-estimation {costs,simulate,poly,verify}``.

Exit codes: 0 success, 1 a verification or threshold check failed, 2 invalid
arguments, unwritable output or a simulation that exceeds the dense budget.

The thread count of the numerical libraries can be pinned with the
``COHERENT_ESTIMATION_THREADS`` environment variable; heavy modules are
imported lazily so the setting takes effect before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

from . import __version__

TOOL = "coherent-estimation"
THREAD_ENV = "COHERENT_ESTIMATION_THREADS"
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Invalid arguments detected after parsing."""


def configure_threads(environ=os.environ) -> None:
    value = environ.get(THREAD_ENV)
    if value:
        for var in THREAD_VARS:
            environ.setdefault(var, value)


def write_atomic(path: str | None, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename; ``None`` means stdout."""
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _config_echo(args, keys) -> dict:
    return {k: getattr(args, k) for k in keys}


def _dump_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=True) + "\n"


# ---------------------------------------------------------------------------
# costs


def run_costs(args) -> int:
    from . import costs

    if args.figure == "fig4":
        points = costs.alpha_sweep_points()
    elif args.figure == "fig5":
        points = costs.sensitivity_points()
    else:
        points = [(n, a, d) for n in args.n for a in args.alpha for d in args.delta]
    for n, a, d in points:
        if n < 1 or not 0 < a < 1 or not 0 < d < 1:
            raise UsageError(f"invalid grid point n={n}, alpha={a}, delta={d}")
    algs = args.alg or list(costs.ALGORITHMS)
    for alg in algs:
        if alg not in costs.ALGORITHMS:
            raise UsageError(f"unknown algorithm {alg!r} for costs")
    rows = costs.sweep(points, algs)
    config = {"figure": args.figure, "algorithms": algs, "points": len(points)}
    if args.figure is None:
        config.update(n=args.n, alpha=args.alpha, delta=args.delta)
    header = [f"tool={TOOL} version={__version__}",
              "config=" + json.dumps(config, sort_keys=True)]
    write_atomic(args.out, costs.rows_to_csv(rows, header))
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


SIM_ALGORITHMS = ("textbook_pe", "improved_pe", "improved_ee", "amplitude")


def _amplitude_problem(dim: int, seed: int):
    """Random ``|Psi>`` and rank ``dim // 2`` projector (``Pi = 0`` when ``dim == 1``)."""
    import numpy as np

    from .numerics import haar_unitary, random_state

    rng = np.random.default_rng(seed)
    psi = random_state(dim, rng)
    B = haar_unitary(dim, rng)
    P = B[:, : dim // 2] @ B[:, : dim // 2].conj().T
    R_pi = 2 * P - np.eye(dim)
    R_psi = 2 * np.outer(psi, psi.conj()) - np.eye(dim)
    return R_pi, R_psi, psi, float(np.real(psi.conj() @ P @ psi))


def run_simulate(args) -> int:
    import numpy as np

    from . import estimators as est

    n, alpha, delta, dim, seed = args.n[0], args.alpha[0], args.delta[0], args.dim, args.seed
    if dim < 1 or n < 1 or not 0 < delta < 1 or not 0 < alpha < 1:
        raise UsageError("simulate needs n >= 1, dim >= 1 and alpha, delta in (0, 1)")
    alg = (args.alg or ["improved_pe"])[0]
    if alg not in SIM_ALGORITHMS:
        raise UsageError(f"unknown algorithm {alg!r} for simulate")
    total_dim = 2**n * dim * (2 if alg == "improved_ee" else 1) * (2**n if args.uncompute else 1)
    if total_dim > est.MAX_DENSE_DIM:
        raise est.SimulationBudgetError(
            f"total dimension {total_dim} exceeds the dense budget {est.MAX_DENSE_DIM}")
    checks = {}
    extra = {}
    if alg == "amplitude":
        R_pi, R_psi, psi, a2 = _amplitude_problem(dim, seed)
        ch, rep = est.amplitude_estimate(R_pi, R_psi, psi, n, delta, m_cos=args.m_cos, m_svt=args.m_svt)
        M = min(int(math.floor(a2 * 2**n)), 2**n - 1)
        probs = rep.output_distribution[0]
        support = float(probs[M] + probs[(M - 1) % 2**n])
        fid2 = est.sequential_fidelity(ch, psi, n, runs=2)
        checks["support_mass"] = support >= 1 - delta
        checks["state_fidelity_after_two_runs"] = fid2 >= 1 - 2 * delta
        extra = {"amplitude_squared": a2, "support": [M, (M - 1) % 2**n], "support_mass": support,
                 "state_fidelity_after_two_runs": fid2}
    else:
        kind = "hamiltonian" if alg == "improved_ee" else "unitary"
        inst = est.gen_instance(n, alpha, dim, seed, kind)
        if args.no_promise:
            rng = np.random.default_rng(seed)
            inst = est.inject_gap_value(inst, 0, int(rng.integers(2**n)), float(rng.uniform(0, 1)))
        if alg == "textbook_pe":
            ch, rep = est.textbook_pe(inst, delta)
        elif alg == "improved_pe":
            ch, rep = est.improved_pe(inst, delta, uncompute_output=args.uncompute, m_svt=args.m_svt)
        else:
            ch, rep = est.improved_ee(inst, delta, m_cos=args.m_cos, m_svt=args.m_svt)
        probs = rep.output_distribution
        floors = inst.floors
        if args.no_promise:
            f = floors[0]
            mass = float(probs[0, f] + probs[0, (f - 1) % 2**n])
            checks["gap_value_support_mass"] = mass >= 1 - delta
            checks["other_eigenstates_success"] = all(
                p >= 1 - delta for p in rep.per_eigenstate_success[1:])
            extra = {"gap_value": float(inst.values[0]), "support": [int(f), int((f - 1) % 2**n)],
                     "gap_value_support_mass": mass}
        else:
            checks["per_eigenstate_success"] = min(rep.per_eigenstate_success) >= 1 - delta
            if not rep.flavor.with_phases:
                checks["coherence_fidelity"] = rep.coherence_fidelity >= 1 - delta
        extra["eigenvalues"] = [float(v) for v in inst.values]
    payload = {
        "tool": TOOL,
        "version": __version__,
        "config": _config_echo(args, ("alg", "n", "alpha", "delta", "dim", "seed", "m_cos",
                                      "m_svt", "no_promise", "uncompute")),
        "report": rep.to_dict(),
        "output_distribution": np.round(rep.output_distribution, 12).tolist(),
        "checks": checks,
        "passed": all(checks.values()),
        "details": extra,
    }
    payload["report"]["seed"] = seed
    write_atomic(args.out, _dump_json(payload))
    return EXIT_OK if payload["passed"] else EXIT_FAILED


# ---------------------------------------------------------------------------
# poly


def run_poly(args) -> int:
    import numpy as np

    from . import polynomials as poly

    kind = args.kind
    payload = {"tool": TOOL, "version": __version__, "config": _config_echo(
        args, ("kind", "eta", "delta", "t", "eps"))}
    x = np.linspace(-1, 1, 10_001)
    if kind == "amplifying":
        eta, delta = args.eta, args.delta[0]
        series, budget = poly.amplifying_poly(eta, delta)
        violation = poly.constraint_violation(series, eta, delta)
        payload.update(degree=series.degree, domain=list(series.domain),
                       coefficients=series.coeffs.tolist(), k_param=budget.k_param,
                       max_violation=violation)
        passed = violation <= 1e-10
    elif kind in ("cos", "sin"):
        fn = poly.jacobi_anger_cos if kind == "cos" else poly.jacobi_anger_sin
        series = fn(args.t, args.eps)
        target = np.cos(args.t * x) if kind == "cos" else np.sin(args.t * x)
        err = float(np.max(np.abs(series(x) - target)))
        payload.update(degree=series.degree, coefficients=series.coeffs.tolist(), max_error=err)
        passed = err <= args.eps
    else:
        raise UsageError(f"unknown polynomial kind {kind!r}")
    payload["passed"] = bool(passed)
    write_atomic(args.out, _dump_json(payload))
    return EXIT_OK if passed else EXIT_FAILED


# ---------------------------------------------------------------------------
# verify


def run_verify(args) -> int:
    from . import invariants

    try:
        results = invariants.run_suites(args.suite, seed=args.seed)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    lines, ok = [], True
    for suite, checks in results.items():
        for c in checks:
            ok &= c.passed
            status = "PASS" if c.passed else "FAIL"
            lines.append(f"{status} [{suite}] {c.name}" + (f" ({c.detail})" if c.detail else ""))
    lines.append(f"{'all suites passed' if ok else 'FAILURES detected'}: "
                 f"{sum(len(v) for v in results.values())} checks, version {__version__}")
    write_atomic(args.out, "\n".join(lines) + "\n")
    return EXIT_OK if ok else EXIT_FAILED


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog=TOOL, description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, n="3", alpha="0.3", delta="0.05"):
        sp.add_argument("--n", type=_int_list, default=_int_list(n), help="bits (comma list)")
        sp.add_argument("--alpha", type=_float_list, default=_float_list(alpha),
                        help="rounding-promise gap fraction (comma list)")
        sp.add_argument("--delta", type=_float_list, default=_float_list(delta),
                        help="error target (comma list)")
        sp.add_argument("--out", default=None, help="output path (stdout when omitted)")

    c = sub.add_parser("costs", help="closed-form query counts as CSV")
    common(c, "10", repr(2.0**-10), "1e-30")
    c.add_argument("--alg", action="append", help="algorithm (repeatable)")
    c.add_argument("--figure", choices=("fig4", "fig5"), default=None,
                   help="emit a predefined sweep instead of the --n/--alpha/--delta grid")
    c.set_defaults(func=run_costs)

    s = sub.add_parser("simulate", help="dense channel simulation, JSON report")
    common(s)
    s.add_argument("--alg", action="append", help=f"one of {', '.join(SIM_ALGORITHMS)}")
    s.add_argument("--dim", type=int, default=4, help="system dimension")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--m-cos", dest="m_cos", type=float, default=3.0)
    s.add_argument("--m-svt", dest="m_svt", type=float, default=3.0)
    s.add_argument("--no-promise", dest="no_promise", action="store_true",
                   help="move one eigenvalue into a rounding gap")
    s.add_argument("--uncompute", action="store_true",
                   help="uncompute the phase estimator (improved_pe only)")
    s.set_defaults(func=run_simulate)

    q = sub.add_parser("poly", help="build and check a polynomial, JSON output")
    q.add_argument("--kind", choices=("amplifying", "cos", "sin"), default="amplifying")
    q.add_argument("--eta", type=float, default=0.1)
    q.add_argument("--delta", type=_float_list, default=[1e-6])
    q.add_argument("--t", type=float, default=math.pi)
    q.add_argument("--eps", type=float, default=1e-6)
    q.add_argument("--out", default=None)
    q.set_defaults(func=run_poly)

    v = sub.add_parser("verify", help="run invariant suites")
    v.add_argument("--suite", action="append", help="suite name (repeatable; default all)")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default=None)
    v.set_defaults(func=run_verify)
    return p


def main(argv=None) -> int:
    configure_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    from .estimators import SimulationBudgetError
    from .numerics import InvalidInputError, RangeError

    try:
        return args.func(args)
    except (UsageError, InvalidInputError, RangeError, SimulationBudgetError) as exc:
        print(f"{TOOL}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"{TOOL}: cannot write output: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
