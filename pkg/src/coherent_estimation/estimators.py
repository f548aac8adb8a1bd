"""Coherent phase, energy and amplitude estimators simulated as dense channels.

Register conventions (most significant factor first):

* estimate register ``b_{n-1} ... b_0`` then the system;
* a single-bit stage acts on ``(b_k, b_{k-1} ... b_0, system)`` where the lower
  bits form the integer ``Delta_k``;
* ancillas of block-encodings precede the register they act on.

Every estimator reports an exact query count derived from the objects it
builds (polynomial degrees, repetition counts), so the cost formulas in
:mod:`coherent_estimation.costs` can be cross-checked against it.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.special import comb

from .blockenc import (
    BlockEncoding,
    QuantumChannel,
    channel_from_block,
    dilate,
    encoded_block,
    lcu_combine,
    multiply,
    negate,
    tensor_identity,
    transformed_block,
    trivial_encoding,
)
from .numerics import (
    InvalidInputError,
    as_matrix,
    dagger,
    haar_unitary,
    is_unitary,
    require_unitary,
    spectral_norm,
)
from .polynomials import (
    ComposedPolynomial,
    amplifying_poly,
    jacobi_anger_cos,
    jacobi_anger_sin,
    solve_r,
)

KINDS = ("unitary", "hamiltonian")
MAX_TEXTBOOK_BITS = 6
MAX_MEDIAN_COPIES = 600
MAX_DENSE_DIM = 2**12


class SimulationBudgetError(RuntimeError):
    """Raised when a dense simulation would exceed the configured size limits."""


# ---------------------------------------------------------------------------
# Instances


@dataclass(frozen=True)
class RoundingPromiseInstance:
    """Diagonalisable operator with eigenvalues ``values`` in ``[0, 1)``.

    For ``kind == "unitary"`` the operator is ``sum_j exp(2 pi i l_j)|psi_j><psi_j|``;
    for ``kind == "hamiltonian"`` it is ``sum_j l_j |psi_j><psi_j|`` and
    ``block_encoding`` holds the oracle. The rounding promise is *not*
    enforced here so that gap-violating inputs can be studied; use
    :func:`verify_promise`.
    """

    n_bits: int
    alpha: float
    values: np.ndarray
    eigenbasis: np.ndarray
    kind: str = "unitary"
    block_encoding: BlockEncoding | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.n_bits < 1:
            raise InvalidInputError("n_bits must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInputError("alpha must lie in (0, 1)")
        if self.kind not in KINDS:
            raise InvalidInputError(f"kind must be one of {KINDS}")
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or np.any(vals < 0) or np.any(vals >= 1):
            raise InvalidInputError("eigenvalues must lie in [0, 1)")
        B = require_unitary(self.eigenbasis, 1e-9, "eigenbasis")
        if B.shape[0] != vals.size:
            raise InvalidInputError("eigenbasis and eigenvalue counts differ")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "eigenbasis", B)
        if self.kind == "hamiltonian" and self.block_encoding is None:
            object.__setattr__(self, "block_encoding", dilate(self.hamiltonian, queries=1))

    @property
    def dim(self) -> int:
        return self.values.size

    @property
    def unitary(self) -> np.ndarray:
        B = self.eigenbasis
        return (B * np.exp(2j * np.pi * self.values)) @ dagger(B)

    @property
    def hamiltonian(self) -> np.ndarray:
        B = self.eigenbasis
        return (B * self.values) @ dagger(B)

    @property
    def floors(self) -> np.ndarray:
        return np.array([floor_estimate(v, self.n_bits) for v in self.values])

    def with_values(self, values) -> "RoundingPromiseInstance":
        """Same eigenbasis with new eigenvalues (the oracle is rebuilt)."""
        return RoundingPromiseInstance(self.n_bits, self.alpha, values, self.eigenbasis,
                                       self.kind, None, self.seed)


def allowed(value: float, n: int, alpha: float) -> bool:
    """True when ``value`` avoids every gap ``[x/2^n, (x + alpha)/2^n]``."""
    frac = value * 2**n - math.floor(value * 2**n)
    return frac > alpha


def verify_promise(inst: RoundingPromiseInstance) -> bool:
    return all(allowed(v, inst.n_bits, inst.alpha) for v in inst.values)


def gen_instance(n: int, alpha: float, dim: int, seed: int, kind: str = "unitary") -> RoundingPromiseInstance:
    """Random instance obeying the ``(n, alpha)`` rounding promise.

    Each eigenvalue picks a bin uniformly and an offset uniformly from
    ``(alpha, 1)`` inside it, which is uniform over the allowed set. The
    eigenbasis is Haar random. Everything derives from ``seed``.
    """
    if dim < 1:
        raise InvalidInputError("dim must be positive")
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError("alpha must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    vals = np.empty(dim)
    for j in range(dim):
        while True:
            x = rng.integers(2**n)
            v = (x + rng.uniform(alpha, 1.0)) / 2**n
            if v < 1.0 and allowed(v, n, alpha):
                break
        vals[j] = v
    B = haar_unitary(dim, rng)
    return RoundingPromiseInstance(n, alpha, vals, B, kind, None, seed)


def inject_gap_value(inst: RoundingPromiseInstance, index: int, bin_index: int,
                     position: float = 0.5) -> RoundingPromiseInstance:
    """Replace one eigenvalue by a point inside the gap of ``bin_index``.

    ``position`` in ``[0, 1]`` places the value along ``[x, x + alpha] / 2^n``.
    """
    if not 0.0 <= position <= 1.0:
        raise InvalidInputError("position must lie in [0, 1]")
    vals = inst.values.copy()
    vals[index] = (bin_index + position * inst.alpha) / 2**inst.n_bits
    return inst.with_values(vals)


def floor_estimate(value: float, n: int) -> int:
    if not 0.0 <= value < 1.0:
        raise InvalidInputError("value must lie in [0, 1)")
    return int(math.floor(value * 2**n)) % 2**n


def bit_k(value: float, n: int, k: int) -> int:
    """The ``(k+1)``-th least significant bit of ``floor(2^n value)``."""
    if not 0 <= k < n:
        raise InvalidInputError("k out of range")
    return (floor_estimate(value, n) >> k) & 1


def low_bits(value: float, n: int, k: int) -> int:
    """``Delta_k``: the integer formed by the ``k`` lowest bits of the estimate."""
    if not 0 <= k < n:
        raise InvalidInputError("k out of range")
    return floor_estimate(value, n) % 2**k


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class EstimatorFlavor:
    with_phases: bool
    with_garbage: bool
    garbage_qubits: int = 0

    def __post_init__(self):
        if self.garbage_qubits < 0:
            raise InvalidInputError("garbage_qubits must be non-negative")
        if not self.with_garbage and self.garbage_qubits:
            raise InvalidInputError("garbage-free estimator cannot declare garbage qubits")


@dataclass(frozen=True)
class EstimationReport:
    algorithm: str
    n: int
    alpha: float
    delta: float
    query_count: int
    flavor: EstimatorFlavor
    per_eigenstate_success: list = field(default_factory=list)
    coherence_fidelity: float = float("nan")
    output_distribution: np.ndarray | None = None
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "n": self.n,
            "alpha": self.alpha,
            "delta": self.delta,
            "query_count": int(self.query_count),
            "garbage_qubits": self.flavor.garbage_qubits,
            "flavor": asdict(self.flavor),
            "per_eigenstate_success": [float(p) for p in self.per_eigenstate_success],
            "coherence_fidelity": float(self.coherence_fidelity),
            "seed": self.seed,
        }


def output_distribution(ch: QuantumChannel, n: int, basis: np.ndarray) -> np.ndarray:
    """Row ``j``: distribution of the estimate register for input ``|0^n>|psi_j>``."""
    d = basis.shape[0]
    if ch.dim != 2**n * d:
        raise InvalidInputError("channel dimension does not match register sizes")
    probs = np.zeros((d, 2**n))
    for K in ch.kraus_ops:
        out = K[:, :d] @ basis  # columns: outputs for each eigenvector
        probs += np.sum(np.abs(out.reshape(2**n, d, d)) ** 2, axis=1).T
    return probs


def coherence_fidelity(ch: QuantumChannel, n: int, basis: np.ndarray, targets) -> float:
    """Fidelity of the output with ``sum_j |target_j>|psi_j> / sqrt(d)``.

    The input is the uniform superposition ``sum_j |0^n>|psi_j> / sqrt(d)``.
    """
    d = basis.shape[0]
    psi_in = np.zeros(2**n * d, dtype=complex)
    ideal = np.zeros(2**n * d, dtype=complex)
    for j in range(d):
        psi_in[:d] += basis[:, j]
        ideal[targets[j] * d:(targets[j] + 1) * d] += basis[:, j]
    psi_in /= math.sqrt(d)
    ideal /= math.sqrt(d)
    return float(sum(abs(np.vdot(ideal, K @ psi_in)) ** 2 for K in ch.kraus_ops))


def _report(algorithm, inst, delta, queries, flavor, ch) -> EstimationReport:
    n = inst.n_bits
    floors = inst.floors
    probs = output_distribution(ch, n, inst.eigenbasis)
    success = [float(probs[j, floors[j]]) for j in range(inst.dim)]
    fid = coherence_fidelity(ch, n, inst.eigenbasis, floors)
    return EstimationReport(algorithm, n, inst.alpha, delta, int(queries), flavor,
                            success, fid, probs, inst.seed)


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise InvalidInputError("delta must lie in (0, 1)")


def _guard_dim(dim: int) -> None:
    if dim > MAX_DENSE_DIM:
        raise SimulationBudgetError(f"dense dimension {dim} exceeds {MAX_DENSE_DIM}")


# ---------------------------------------------------------------------------
# Textbook phase estimation


def sinc_squared(x: float) -> float:
    """``sin^2(pi x) / (pi x)^2`` with the removable singularity filled in."""
    return float(np.sinc(x) ** 2)


ROUNDING_GAP = 8.0 / math.pi**2 - 0.5


@dataclass(frozen=True)
class TextbookPlan:
    """Parameters of median-amplified phase estimation."""

    n: int
    alpha: float
    delta: float
    extra_bits: int
    eta: float
    delta_med: float
    copies: int

    @property
    def total_bits(self) -> int:
        return self.n + self.extra_bits

    @property
    def query_count(self) -> int:
        return (2**self.total_bits - 1) * self.copies

    @property
    def garbage_qubits(self) -> int:
        return self.total_bits * self.copies

    @property
    def shift(self) -> float:
        """Centering offset for the ``total_bits``-bit readout.

        The allowed offsets ``2^N lambda - y`` in a bin form ``(alpha_N, 1)``
        with ``alpha_N = alpha 2^r``; shifting by the midpoint
        ``(1 + alpha_N)/2`` puts the peak of the Fejer kernel in the middle.
        """
        return (1.0 + self.alpha * 2**self.extra_bits) / 2.0


def textbook_plan(n: int, alpha: float, delta: float) -> TextbookPlan:
    """Extra bits, gap and repetition count of median-amplified estimation.

    ``alpha <= 1/2`` (boundary included) estimates ``r`` extra bits and relies
    on the two-adjacent-bin bound ``8/pi^2``; larger ``alpha`` uses the gap
    ``sinc^2((1 - alpha)/2) - 1/2`` directly.
    """
    _check_delta(delta)
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError("alpha must lie in (0, 1)")
    delta_med = delta**2 / 6.25
    if alpha <= 0.5:
        r = math.ceil(math.log2(1.0 / (2.0 * alpha)))
        eta = ROUNDING_GAP
    else:
        r = 0
        eta = sinc_squared((1.0 - alpha) / 2.0) - 0.5
    copies = math.ceil(math.log(1.0 / delta_med) / (2.0 * eta**2))
    return TextbookPlan(n, alpha, delta, r, eta, delta_med, copies)


def readout_amplitudes(values, total_bits: int, shift: float) -> np.ndarray:
    """``beta`` amplitudes of one shifted phase-estimation copy, shape ``(d, 2^N)``."""
    N = 2**total_bits
    t = np.arange(N)
    y = np.arange(N)
    u = np.subtract.outer(np.asarray(values) * N - shift, y)  # (d, N)
    return np.exp(2j * np.pi * np.multiply.outer(u, t) / N).mean(axis=2)


def _median_cdf(F: np.ndarray, T: np.ndarray, copies: int) -> np.ndarray:
    """Multilinear extension of ``P(lower median <= x)``.

    With ``F`` the per-copy weight of outcomes ``<= x`` and ``T`` the total
    weight, the lower median is ``<= x`` exactly when at least
    ``ceil(M/2)`` copies are. Real weights reproduce the binomial tail.
    """
    kstar = (copies + 1) // 2
    out = np.zeros_like(F, dtype=complex)
    for i in range(kstar, copies + 1):
        out += comb(copies, i) * F**i * (T - F) ** (copies - i)
    return out


def median_gram(values, n: int, plan: TextbookPlan) -> np.ndarray:
    """Gram matrices ``G[x]`` of the garbage states for median outcome ``x``.

    ``G[x][j, j']`` is the inner product of the ``M``-copy garbage left with
    eigenvector ``j'`` and ``j`` when the median estimate equals ``x``. The
    diagonal is the outcome distribution.
    """
    r = plan.extra_bits
    amp = readout_amplitudes(values, plan.total_bits, plan.shift)
    grouped = amp.reshape(amp.shape[0], 2**n, 2**r)
    w = np.einsum("jxt,kxt->xjk", grouped, np.conj(grouped))
    F = np.cumsum(w, axis=0)
    S = _median_cdf(F, F[-1], plan.copies)
    return np.diff(np.concatenate([np.zeros_like(S[:1]), S]), axis=0)


def _shift(n_dim: int, x: int) -> np.ndarray:
    return np.roll(np.eye(n_dim), x, axis=0)


def textbook_pe(inst: RoundingPromiseInstance, delta: float):
    """Median-amplified phase estimation as a channel on ``estimate (x) system``.

    The ``M`` copies of ``N``-bit garbage are traced out analytically: every
    Kraus operator is ``shift_x (x) B diag(v) B^dag`` where the vectors ``v``
    factor the Gram matrix of the garbage for median outcome ``x``.
    """
    if inst.kind != "unitary":
        raise InvalidInputError("textbook_pe needs a unitary instance")
    plan = textbook_plan(inst.n_bits, inst.alpha, delta)
    if plan.total_bits > MAX_TEXTBOOK_BITS or plan.copies > MAX_MEDIAN_COPIES:
        raise SimulationBudgetError(
            f"textbook simulation limited to {MAX_TEXTBOOK_BITS} bits and "
            f"{MAX_MEDIAN_COPIES} copies (needs {plan.total_bits}, {plan.copies})"
        )
    n, B = inst.n_bits, inst.eigenbasis
    _guard_dim(2**n * inst.dim)
    G = median_gram(inst.values, n, plan)
    ops = []
    for x in range(2**n):
        Gx = (G[x] + dagger(G[x])) / 2
        w, V = np.linalg.eigh(Gx)
        S = _shift(2**n, x)
        for m in np.nonzero(w > 1e-15)[0]:
            v = math.sqrt(w[m]) * V[:, m]
            ops.append(np.kron(S, (B * v) @ dagger(B)))
    ch = QuantumChannel(tuple(ops))
    flavor = EstimatorFlavor(True, True, plan.garbage_qubits)
    return ch, _report("textbook_pe", inst, delta, plan.query_count, flavor, ch)


# ---------------------------------------------------------------------------
# Iterative bit estimators


def bit_window(k: int, alpha: float) -> float:
    """Width ``2^-k (1/2 + alpha/2)`` of the bit-0 region of a higher bit."""
    return 2.0**-k * (0.5 + alpha / 2.0)


def bit_offset(k: int, alpha: float) -> float:
    """Phase offset that centres the bit-0 region of stage ``k`` on 1/2."""
    if k == 0:
        return 0.25 - alpha / 4.0
    return 0.5 - bit_window(k, alpha) / 2.0


def bit_gap(k: int, alpha: float, rule: str = "exact") -> float:
    """Distance of ``cos^2(pi lambda^(k))`` from 1/2 on the allowed regions.

    ``"exact"`` evaluates the cosine at the region edge; ``"linear"`` uses the
    lower bounds ``alpha/2`` and ``1/2 - w``.
    """
    if rule == "exact":
        if k == 0:
            return math.sin(math.pi * alpha / 2.0) / 2.0
        return math.cos(math.pi * bit_window(k, alpha)) / 2.0
    if rule == "linear":
        return alpha / 2.0 if k == 0 else 0.5 - bit_window(k, alpha)
    raise InvalidInputError(f"unknown gap rule {rule!r}")


def amplification_error(delta: float, m_svt: float = 3) -> float:
    """Share ``(1 - 10^-m) delta^2 / 8`` of the bit error given to the polynomial."""
    return (1.0 - 10.0**-m_svt) * delta**2 / 8.0


MODIFIED_HADAMARD = np.array([[1, 1], [1j, -1j]]) / math.sqrt(2)


def shifted_power(inst: RoundingPromiseInstance, k: int) -> np.ndarray:
    """``(e^{-2 pi i Delta/2^n} (x) U)^{2^{n-k-1}} e^{2 pi i phi_k}`` on ``Delta (x) system``."""
    n = inst.n_bits
    reps = 2 ** (n - k - 1)
    deltas = np.arange(2**k)
    B = inst.eigenbasis
    blocks = []
    for D in deltas:
        ph = reps * (inst.values - D / 2**n) + bit_offset(k, inst.alpha)
        blocks.append((B * np.exp(2j * np.pi * ph)) @ dagger(B))
    return _block_diag(blocks)


def _block_diag(blocks) -> np.ndarray:
    d = blocks[0].shape[0]
    out = np.zeros((len(blocks) * d,) * 2, dtype=complex)
    for i, b in enumerate(blocks):
        out[i * d:(i + 1) * d, i * d:(i + 1) * d] = b
    return out


def signal_encoding(G: np.ndarray, queries: int) -> BlockEncoding:
    """One-ancilla encoding of ``(I + G)/2`` via the modified Hadamard."""
    d = G.shape[0]
    ctrl = _block_diag([np.eye(d), G])
    Hl = np.kron(MODIFIED_HADAMARD, np.eye(d))
    Hr = np.kron(MODIFIED_HADAMARD.T, np.eye(d))
    return BlockEncoding(Hl @ ctrl @ Hr, 1, d, queries)


@dataclass(frozen=True)
class BitCircuit:
    """Unitary on ``answer (x) garbage (x) system`` computing one output."""

    unitary: np.ndarray
    answer_qubits: int
    garbage_qubits: int
    system_dim: int
    query_count: int
    declared_garbage: int = 0

    @property
    def dim(self) -> int:
        return self.unitary.shape[0]


def pe_bit_circuit(inst: RoundingPromiseInstance, k: int, delta: float,
                   m_svt: float = 3, gap_rule: str = "exact") -> BitCircuit:
    """Stage ``k`` of coherent iterative phase estimation (no garbage)."""
    if inst.kind != "unitary":
        raise InvalidInputError("phase estimation needs a unitary instance")
    n = inst.n_bits
    if not 0 <= k < n:
        raise InvalidInputError("k out of range")
    _check_delta(delta)
    _guard_dim(2 ** (k + 2) * inst.dim)
    sig = signal_encoding(shifted_power(inst, k), 2 ** (n - k - 1))
    A, _ = amplifying_poly(bit_gap(k, inst.alpha, gap_rule), amplification_error(delta, m_svt))
    p = A.of_square()
    P = transformed_block(encoded_block(sig), p)
    be = dilate(P, queries=p.degree * sig.queries)
    return BitCircuit(be.unitary, 1, 0, be.system_dim, be.queries)


def iterative_pe_bit(inst, k: int, delta: float, m_svt: float = 3, gap_rule: str = "exact"):
    circ = pe_bit_circuit(inst, k, delta, m_svt, gap_rule)
    return QuantumChannel.unitary_channel(circ.unitary), circ.query_count


def comparator_encoding(n: int, k: int) -> BlockEncoding:
    """Encoding of ``sum_Delta (2 Delta / 2^n) |Delta><Delta|`` on ``k`` bits.

    Ancillas: ``n - 1`` counter qubits and one flag. The counter is put in
    uniform superposition, the flag records ``[x < Delta]`` and is negated,
    and the counter is un-prepared; postselecting all ancillas on zero keeps
    the fraction of counter values below ``Delta``.
    """
    if not 0 <= k < n:
        raise InvalidInputError("k out of range")
    cx, dk = 2 ** (n - 1), 2**k
    had = np.ones((1, 1))
    h1 = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
    for _ in range(n - 1):
        had = np.kron(had, h1)
    H_all = np.kron(np.kron(had, np.eye(2)), np.eye(dk))
    X_flag = np.kron(np.kron(np.eye(cx), np.array([[0, 1], [1, 0]])), np.eye(dk))
    dim = cx * 2 * dk
    comp = np.zeros((dim, dim))
    for x in range(cx):
        for f in range(2):
            for D in range(dk):
                src = (x * 2 + f) * dk + D
                dst = (x * 2 + (f ^ int(x < D))) * dk + D
                comp[dst, src] = 1.0
    return BlockEncoding(H_all @ X_flag @ comp @ H_all, n, dk, 0)


def _scalar_encoding(sign: float, dim: int) -> BlockEncoding:
    return BlockEncoding(sign * np.eye(dim, dtype=complex), 0, dim, 0)


def shifted_hamiltonian_encoding(be_H: BlockEncoding, n: int, k: int, alpha: float,
                                 delta_value: int | None = None) -> BlockEncoding:
    """Encoding of ``H/2 - W_k/4 + (4 phi_k 2^{k-n}) I / 4``.

    Its eigenvalues are ``2^{k-n} lambda^(k)``. With ``delta_value`` set only
    the block for that ``Delta`` is built (the operator is block diagonal in
    ``Delta``), which keeps the ancilla-heavy encoding small.
    """
    c = 4.0 * bit_offset(k, alpha) * 2.0 ** (k - n)
    W = comparator_encoding(n, k)
    d = be_H.system_dim
    if delta_value is None:
        H_term = tensor_identity(be_H, 2**k, before=True)
        W_term = tensor_identity(W, d)
        dim = 2**k * d
    else:
        if not 0 <= delta_value < 2**k:
            raise InvalidInputError("Delta out of range")
        a = 2**W.ancillas_m
        U = W.unitary.reshape(a, 2**k, a, 2**k)[:, delta_value, :, delta_value]
        W_term = tensor_identity(BlockEncoding(U, W.ancillas_m, 1, 0), d)
        H_term = be_H
        dim = d
    return lcu_combine([
        (0.5, H_term),
        (0.25, negate(W_term)),
        ((1.0 + c) / 8.0, _scalar_encoding(1.0, dim)),
        ((1.0 - c) / 8.0, _scalar_encoding(-1.0, dim)),
    ])


@dataclass(frozen=True)
class EnergyBitPlan:
    eta: float
    delta_cos: float
    delta_amp: float
    r_value: float
    cos_terms: int
    time: float


def energy_bit_plan(n: int, k: int, alpha: float, delta: float, m_cos: float = 3,
                    m_svt: float = 3, gap_rule: str = "exact") -> EnergyBitPlan:
    eta = bit_gap(k, alpha, gap_rule)
    delta_cos = 10.0**-m_cos * eta
    t = math.pi * 2 ** (n - k)
    r = solve_r(math.e * t / 2.0, 1.25 * delta_cos / 2.0)
    return EnergyBitPlan(eta, delta_cos, amplification_error(delta, m_svt), r,
                         int(math.floor(r)), t)


def energy_bit_polynomial(plan: EnergyBitPlan) -> ComposedPolynomial:
    """``A_{(eta - delta_cos) -> delta_amp}(p_cos(x)^2)``."""
    A, _ = amplifying_poly(plan.eta - plan.delta_cos, plan.delta_amp)
    p_cos = jacobi_anger_cos(plan.time, plan.delta_cos / 2.0, terms=plan.cos_terms)
    return ComposedPolynomial(A, p_cos)


def ee_bit_circuit(be_H: BlockEncoding, n: int, k: int, alpha: float, delta: float,
                   m_cos: float = 3, m_svt: float = 3, gap_rule: str = "exact") -> BitCircuit:
    """Stage ``k`` of coherent iterative energy estimation.

    Acts on ``out (x) svt (x) Delta (x) system``. The singular value
    transformation of the shifted Hamiltonian leaves the bit in the ``svt``
    qubit, and a controlled flip copies it to ``out``. The ``svt`` qubit is
    the simulated part of the garbage; the remaining ancillas of the
    encoding return to zero in this matrix-level realization and are omitted.
    """
    if be_H is None:
        raise InvalidInputError("energy estimation needs a block-encoded Hamiltonian")
    if not 0 <= k < n:
        raise InvalidInputError("k out of range")
    _check_delta(delta)
    d = be_H.system_dim
    _guard_dim(2 ** (k + 2) * d)
    plan = energy_bit_plan(n, k, alpha, delta, m_cos, m_svt, gap_rule)
    poly = energy_bit_polynomial(plan)
    blocks = []
    queries = None
    ancillas = None
    for D in range(2**k):
        enc = shifted_hamiltonian_encoding(be_H, n, k, alpha, D)
        blocks.append(transformed_block(encoded_block(enc), poly))
        queries = poly.degree * max(enc.queries, 1)
        ancillas = enc.ancillas_m
    V = dilate(_block_diag(blocks)).unitary
    dim = V.shape[0]
    X = np.array([[0, 1], [1, 0]])
    P0 = np.kron(np.array([[1, 0], [0, 0]]), np.eye(dim // 2))
    P1 = np.kron(np.array([[0, 0], [0, 1]]), np.eye(dim // 2))
    toffoli = np.kron(np.eye(2), P0) + np.kron(X, P1)
    U = toffoli @ np.kron(np.eye(2), V)
    return BitCircuit(U, 1, 1, 2**k * d, queries, declared_garbage=ancillas + 1)


def iterative_ee_bit(inst: RoundingPromiseInstance, k: int, delta: float, m_cos: float = 3,
                     m_svt: float = 3, gap_rule: str = "exact"):
    if inst.kind != "hamiltonian":
        raise InvalidInputError("energy estimation needs a hamiltonian instance")
    circ = ee_bit_circuit(inst.block_encoding, inst.n_bits, k, inst.alpha, delta,
                          m_cos, m_svt, gap_rule)
    return QuantumChannel.unitary_channel(circ.unitary), circ.query_count


# ---------------------------------------------------------------------------
# Uncompute and stitching


def _copy_unitary(answer_qubits: int, rest_dim: int) -> np.ndarray:
    """XOR the answer register into a fresh copy register: ``|c, a, r> -> |c^a, a, r>``."""
    A = 2**answer_qubits
    P = np.zeros((A * A, A * A))
    for c in range(A):
        for a in range(A):
            P[(c ^ a) * A + a, c * A + a] = 1.0
    return np.kron(P, np.eye(rest_dim))


def uncompute(circ: BitCircuit) -> tuple[QuantumChannel, int]:
    """Copy the answer out, run the circuit backwards and discard its registers.

    The result is a channel on ``copy (x) system`` whose Kraus operators are
    ``<a, g| W |0, 0>`` with ``W = (I (x) V^dag) COPY (I (x) V)``. The query
    count doubles.
    """
    if not is_unitary(circ.unitary, 1e-8):
        raise InvalidInputError("uncompute needs a unitary circuit")
    A = 2**circ.answer_qubits
    Gd = 2**circ.garbage_qubits
    d = circ.system_dim
    _guard_dim(A * circ.dim)
    V = np.kron(np.eye(A), circ.unitary)
    W = dagger(V) @ _copy_unitary(circ.answer_qubits, Gd * d) @ V
    W = W.reshape(A, A * Gd, d, A, A * Gd, d)
    ops = tuple(W[:, b, :, :, 0, :].reshape(A * d, A * d) for b in range(A * Gd))
    return QuantumChannel(ops).compressed(), 2 * circ.query_count


def stitch(bits, n: int) -> QuantumChannel:
    """Compose single-bit stages ``k = 0 .. n-1`` on ``(b_{n-1} ... b_0, system)``.

    ``bits[k]`` is a channel on ``(b_k, Delta_k, system)``; it is padded with
    identities on the not-yet-computed higher bits.
    """
    bits = list(bits)
    if len(bits) != n:
        raise InvalidInputError("need one stage per bit")
    d = bits[0].dim // 2
    total = None
    for k, ch in enumerate(bits):
        if ch.dim != 2 ** (k + 1) * d:
            raise InvalidInputError(f"stage {k} has dimension {ch.dim}")
        pad = np.eye(2 ** (n - k - 1))
        stage = QuantumChannel(tuple(np.kron(pad, K) for K in ch.kraus_ops))
        total = stage if total is None else total.then(stage)
    return total


def stitch_unitaries(unitaries, n: int) -> np.ndarray:
    """Unitary version of :func:`stitch`."""
    U = None
    for k, V in enumerate(unitaries):
        stage = np.kron(np.eye(2 ** (n - k - 1)), V)
        U = stage if U is None else stage @ U
    return U


def stage_errors(delta: float, n: int) -> list:
    """Per-bit error budget ``delta 2^{-k-1}``; it sums to ``delta (1 - 2^-n)``."""
    return [delta * 2.0 ** (-k - 1) for k in range(n)]


def improved_pe(inst: RoundingPromiseInstance, delta: float, uncompute_output: bool = False,
                m_svt: float = 3, gap_rule: str = "exact"):
    """Coherent iterative phase estimation stitched over all bits.

    Without uncomputation the estimator has phases but no garbage. With it,
    the stitched unitary is built at ``delta/2`` and run forwards and
    backwards around a copy of the answer, which removes the phases.
    """
    if inst.kind != "unitary":
        raise InvalidInputError("improved_pe needs a unitary instance")
    _check_delta(delta)
    n = inst.n_bits
    _guard_dim(2**n * inst.dim * (2**n if uncompute_output else 1))
    budget = delta / 2.0 if uncompute_output else delta
    circs = [pe_bit_circuit(inst, k, dk, m_svt, gap_rule)
             for k, dk in enumerate(stage_errors(budget, n))]
    U = stitch_unitaries([c.unitary for c in circs], n)
    queries = sum(c.query_count for c in circs)
    if uncompute_output:
        ch, queries = uncompute(BitCircuit(U, n, 0, inst.dim, queries))
        flavor = EstimatorFlavor(False, False, 0)
    else:
        ch = QuantumChannel.unitary_channel(U)
        flavor = EstimatorFlavor(True, False, 0)
    return ch, _report("improved_pe", inst, delta, queries, flavor, ch)


def improved_ee_channel(be_H: BlockEncoding, n: int, alpha: float, delta: float,
                        m_cos: float = 3, m_svt: float = 3, gap_rule: str = "exact"):
    """Stitch of per-bit uncomputed energy-estimation stages.

    Returns ``(channel, query_count, declared_garbage)`` where the garbage is
    the width of the largest per-bit garbage register before uncomputation.
    """
    _check_delta(delta)
    chans, queries, garbage = [], 0, 0
    for k, dk in enumerate(stage_errors(delta, n)):
        circ = ee_bit_circuit(be_H, n, k, alpha, dk / 2.0, m_cos, m_svt, gap_rule)
        ch, q = uncompute(circ)
        chans.append(ch)
        queries += q
        garbage = max(garbage, circ.declared_garbage)
    return stitch(chans, n), queries, garbage


def improved_ee(inst: RoundingPromiseInstance, delta: float, m_cos: float = 3,
                m_svt: float = 3, gap_rule: str = "exact"):
    if inst.kind != "hamiltonian":
        raise InvalidInputError("improved_ee needs a hamiltonian instance")
    ch, queries, _ = improved_ee_channel(inst.block_encoding, inst.n_bits, inst.alpha,
                                         delta, m_cos, m_svt, gap_rule)
    return ch, _report("improved_ee", inst, delta, queries, EstimatorFlavor(False, False, 0), ch)


# ---------------------------------------------------------------------------
# Hamiltonian simulation


def _hermitian_block(be: BlockEncoding) -> np.ndarray:
    H = encoded_block(be)
    if spectral_norm(H - dagger(H)) > 1e-9:
        raise InvalidInputError("encoded block is not hermitian")
    return (H + dagger(H)) / 2


def hamsim_query_count(t: float, eps: float, oracle_queries: int = 1) -> int:
    """``3 floor(r(e|t|/2, eps/24)) + 3`` oracle calls (zero for ``t = 0``)."""
    if t == 0:
        return 0
    return (3 * int(math.floor(solve_r(math.e * abs(t) / 2.0, eps / 24.0))) + 3) * oracle_queries


def hamsim_encoding(be_H: BlockEncoding, t: float, eps: float) -> tuple[BlockEncoding, np.ndarray]:
    """One-ancilla encoding of an approximation to ``exp(i H t)`` and the exact target.

    ``(p_cos + i p_sin)/2`` is built from Jacobi-Anger sums accurate to
    ``eps/30`` and then amplified with ``3B - 4 B B^dag B``.
    """
    if not 0.0 < eps < 1.0:
        raise InvalidInputError("eps must lie in (0, 1)")
    H = _hermitian_block(be_H)
    target = expm(1j * t * H)
    queries = hamsim_query_count(t, eps, max(be_H.queries, 1))
    if t == 0:
        return trivial_encoding(np.eye(H.shape[0])), target
    tau = abs(t)
    e, Q = np.linalg.eigh(H)
    pc = jacobi_anger_cos(tau, eps / 30.0)(e)
    ps = math.copysign(1.0, t) * jacobi_anger_sin(tau, eps / 30.0)(e)
    b = (pc + 1j * ps) / 2.0
    a = 3.0 * b - 4.0 * np.abs(b) ** 2 * b
    A = (Q * a) @ dagger(Q)
    return dilate(A, queries=queries), target


def hamsim_channel(be_H: BlockEncoding, t: float, eps: float) -> tuple[QuantumChannel, int]:
    be, target = hamsim_encoding(be_H, t, eps)
    ch, _ = channel_from_block(be, target)
    return ch, be.queries


# ---------------------------------------------------------------------------
# Amplitude estimation


def _require_reflection(R, name: str) -> np.ndarray:
    R = as_matrix(R)
    if not is_unitary(R) or spectral_norm(R - dagger(R)) > 1e-8:
        raise InvalidInputError(f"{name} must be a hermitian unitary reflection")
    return R


def projector_encoding(R, queries: int = 1) -> BlockEncoding:
    """``(I + R)/2`` from a reflection ``R`` by a one-ancilla combination."""
    d = R.shape[0]
    return lcu_combine([(0.5, trivial_encoding(R, queries)),
                        (0.5, _scalar_encoding(1.0, d))])


def amplitude_encoding(R_Pi, R_Psi) -> BlockEncoding:
    """Encoding of ``|Psi><Psi| Pi |Psi><Psi| = a^2 |Psi><Psi|`` (three reflection calls)."""
    R_Pi = _require_reflection(R_Pi, "R_Pi")
    R_Psi = _require_reflection(R_Psi, "R_Psi")
    if R_Pi.shape != R_Psi.shape:
        raise InvalidInputError("reflections act on different spaces")
    Psi = projector_encoding(R_Psi)
    Pi = projector_encoding(R_Pi)
    return multiply(multiply(Psi, Pi), Psi)


def sequential_fidelity(ch: QuantumChannel, psi, n: int, runs: int = 2) -> float:
    """Fidelity with ``|psi>`` after ``runs`` estimations, discarding each estimate."""
    psi = np.asarray(psi, dtype=complex)
    d = psi.size
    rho = np.outer(psi, np.conj(psi))
    zero = np.zeros((2**n, 2**n))
    zero[0, 0] = 1.0
    for _ in range(runs):
        out = ch.apply(np.kron(zero, rho)).reshape(2**n, d, 2**n, d)
        rho = np.einsum("aiaj->ij", out)
    return float(np.real(np.vdot(psi, rho @ psi)))


def amplitude_estimate(R_Pi, R_Psi, psi, n: int, delta: float, alpha: float = 0.5,
                       m_cos: float = 3, m_svt: float = 3):
    """Non-destructive estimate of ``floor(2^n a^2)`` with ``a^2 = <Psi|Pi|Psi>``.

    The amplitude operator is block-encoded with three reflection calls and
    fed to energy estimation without a rounding promise, so the estimate is
    the floor or one below it (mod ``2^n``).
    """
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    if abs(np.linalg.norm(psi) - 1) > 1e-9:
        raise InvalidInputError("psi must be normalised")
    be = amplitude_encoding(R_Pi, R_Psi)
    R_Psi = as_matrix(R_Psi)
    if np.linalg.norm(R_Psi @ psi - psi) > 1e-8:
        raise InvalidInputError("psi must be the +1 eigenvector of R_Psi")
    ch, queries, garbage = improved_ee_channel(be, n, alpha, delta, m_cos, m_svt)
    a2 = float(np.real(np.vdot(psi, (as_matrix(R_Pi) + np.eye(psi.size)) / 2 @ psi)))
    d = psi.size
    rho_in = np.kron(np.diag(np.eye(2**n)[0]), np.outer(psi, np.conj(psi)))
    out = ch.apply(rho_in).reshape(2**n, d, 2**n, d)
    probs = np.real(np.einsum("aiai->a", out))
    target = min(int(math.floor(a2 * 2**n)), 2**n - 1)
    fid = sequential_fidelity(ch, psi, n, runs=1)
    report = EstimationReport("amplitude_estimate", n, alpha, delta, queries,
                              EstimatorFlavor(False, False, 0), [float(probs[target])],
                              fid, probs[None, :], None)
    return ch, report
