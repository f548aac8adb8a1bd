"""Block-encodings, matrix-level singular value transformation and channels.

Layout convention: a block-encoding with ``m`` ancilla qubits acts on
``C^(2^m) (x) C^d`` with the ancillas as the most significant tensor factor, so
the encoded operator is the top-left ``d x d`` block of the unitary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    InvalidInputError,
    as_matrix,
    dagger,
    is_unitary,
    psd_sqrt,
    require_unitary,
    spectral_norm,
    svd,
)

NORM_TOL = 1e-10
DENSITY_TOL = 1e-8


@dataclass(frozen=True)
class BlockEncoding:
    """Unitary whose top-left block (ancillas in ``|0^m>``) is the target.

    ``queries`` counts oracle calls made by one application of ``unitary``;
    it is carried through products, combinations and transformations.
    """

    unitary: np.ndarray
    ancillas_m: int
    system_dim: int
    queries: int = 0

    def __post_init__(self):
        U = as_matrix(self.unitary)
        if self.ancillas_m < 0 or self.system_dim < 1:
            raise InvalidInputError("invalid ancilla count or system dimension")
        if U.shape != (2**self.ancillas_m * self.system_dim,) * 2:
            raise InvalidInputError(
                f"unitary shape {U.shape} does not match 2^{self.ancillas_m} x {self.system_dim}"
            )
        object.__setattr__(self, "unitary", U)

    @property
    def query_cost(self) -> int:
        return self.queries

    @property
    def total_dim(self) -> int:
        return self.unitary.shape[0]


def encoded_block(be: BlockEncoding) -> np.ndarray:
    """``(<0^m| (x) I) U (|0^m> (x) I)``."""
    d = be.system_dim
    return be.unitary[:d, :d].copy()


def trivial_encoding(U, queries: int = 0) -> BlockEncoding:
    """A unitary viewed as a block-encoding of itself (no ancillas)."""
    U = require_unitary(U, name="U")
    return BlockEncoding(U, 0, U.shape[0], queries)


def dilate(M, queries: int = 0) -> BlockEncoding:
    """One-ancilla unitary dilation ``[[M, sqrt(I - M M^dag)], [sqrt(I - M^dag M), -M^dag]]``."""
    M = as_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise InvalidInputError("dilation requires a square matrix")
    if spectral_norm(M) > 1 + NORM_TOL:
        raise InvalidInputError("cannot dilate a matrix with norm above 1")
    d = M.shape[0]
    I = np.eye(d)
    top = np.hstack([M, psd_sqrt(I - M @ dagger(M))])
    bottom = np.hstack([psd_sqrt(I - dagger(M) @ M), -dagger(M)])
    return BlockEncoding(np.vstack([top, bottom]), 1, d, queries)


def _embed_ancillas(be: BlockEncoding, before: int, after: int) -> np.ndarray:
    """Act with ``be`` on its own ancillas inside a larger ancilla register.

    The register is ``before`` idle qubits, then ``be``'s ancillas, then
    ``after`` idle qubits, then the system.
    """
    U = be.unitary.reshape(2**be.ancillas_m, be.system_dim, 2**be.ancillas_m, be.system_dim)
    eye_b = np.eye(2**before)
    eye_a = np.eye(2**after)
    dim = 2 ** (before + be.ancillas_m + after) * be.system_dim
    # Output axes: before, own, after, system for rows and then columns.
    big = np.einsum("ij,ambn,kl->iakmjbln", eye_b, U, eye_a, optimize=True)
    return big.reshape(dim, dim)


def _state_prep(amplitudes: np.ndarray) -> np.ndarray:
    """Householder reflection mapping ``|0>`` to the unit vector ``amplitudes``."""
    v = np.asarray(amplitudes, dtype=complex)
    e0 = np.zeros_like(v)
    e0[0] = 1.0
    u = e0 - v
    nu = np.vdot(u, u).real
    if nu < 1e-30:
        return np.eye(v.size, dtype=complex)
    return np.eye(v.size) - 2.0 * np.outer(u, np.conj(u)) / nu


def lcu_combine(terms) -> BlockEncoding:
    """Linear combination ``sum_i w_i A_i`` of block-encoded operators.

    Every term keeps its own ancilla register; a control register of
    ``max(1, ceil(log2(slots)))`` qubits selects the term. When the weights sum
    to less than one, two extra identity slots carry the remaining weight on
    the preparation and un-preparation sides separately, so their
    contributions cancel in the encoded block.
    """
    terms = list(terms)
    if not terms:
        raise InvalidInputError("need at least one term")
    weights = np.array([float(w) for w, _ in terms])
    if np.any(weights < 0):
        raise InvalidInputError("weights must be non-negative; absorb signs into encodings")
    total = weights.sum()
    if total > 1 + 1e-12:
        raise InvalidInputError(f"weights sum to {total} > 1")
    dims = {be.system_dim for _, be in terms}
    if len(dims) != 1:
        raise InvalidInputError("all terms must act on the same system")
    d = dims.pop()
    slack = 1.0 - total
    n_slots = len(terms) + (2 if slack > 1e-12 else 0)
    c = max(1, math.ceil(math.log2(n_slots)))
    ms = [be.ancillas_m for _, be in terms]
    m_inner = sum(ms)
    inner_dim = 2**m_inner * d

    right = np.zeros(2**c)
    left = np.zeros(2**c)
    right[: len(terms)] = np.sqrt(weights)
    left[: len(terms)] = np.sqrt(weights)
    if n_slots > len(terms):
        right[len(terms)] = math.sqrt(slack)
        left[len(terms) + 1] = math.sqrt(slack)
    right /= np.linalg.norm(right)
    left /= np.linalg.norm(left)

    blocks = []
    offset = 0
    for m_i, (_, be) in zip(ms, terms):
        blocks.append(_embed_ancillas(be, offset, m_inner - offset - m_i))
        offset += m_i
    while len(blocks) < 2**c:
        blocks.append(np.eye(inner_dim, dtype=complex))
    select = np.zeros((2**c * inner_dim,) * 2, dtype=complex)
    for s, B in enumerate(blocks):
        select[s * inner_dim:(s + 1) * inner_dim, s * inner_dim:(s + 1) * inner_dim] = B
    prep_r = _state_prep(right)
    prep_l = _state_prep(left)
    U = _apply_on_control(dagger(prep_l), _apply_on_control(prep_r, select, inner_dim, side="right"),
                          inner_dim, side="left")
    queries = sum(be.queries for _, be in terms)
    return BlockEncoding(U, c + m_inner, d, queries)


def _apply_on_control(P: np.ndarray, M: np.ndarray, inner_dim: int, side: str) -> np.ndarray:
    """Multiply ``M`` by ``P (x) I_inner`` on the given side without forming the kron."""
    k = P.shape[0]
    T = M.reshape(k, inner_dim, k, inner_dim)
    if side == "left":
        T = np.einsum("ab,bicj->aicj", P, T, optimize=True)
    else:
        T = np.einsum("aibj,bc->aicj", T, P, optimize=True)
    return T.reshape(M.shape)


def negate(be: BlockEncoding) -> BlockEncoding:
    """Encoding of ``-A`` (a global sign on the unitary)."""
    return BlockEncoding(-be.unitary, be.ancillas_m, be.system_dim, be.queries)


def tensor_identity(be: BlockEncoding, dim: int, before: bool = False) -> BlockEncoding:
    """Encoding of ``A (x) I_dim`` (or ``I_dim (x) A`` when ``before``)."""
    a, d = 2**be.ancillas_m, be.system_dim
    U = be.unitary.reshape(a, d, a, d)
    eye = np.eye(dim)
    if before:
        big = np.einsum("ij,akbl->aikbjl", eye, U, optimize=True)
        new_d = dim * d
    else:
        big = np.einsum("akbl,ij->akiblj", U, eye, optimize=True)
        new_d = d * dim
    return BlockEncoding(big.reshape(a * new_d, a * new_d), be.ancillas_m, new_d, be.queries)


def multiply(first: BlockEncoding, second: BlockEncoding) -> BlockEncoding:
    """Encoding of ``A_first @ A_second`` with disjoint ancilla registers."""
    if first.system_dim != second.system_dim:
        raise InvalidInputError("system dimensions differ")
    m1, m2 = first.ancillas_m, second.ancillas_m
    U1 = _embed_ancillas(first, 0, m2)
    U2 = _embed_ancillas(second, m1, 0)
    return BlockEncoding(U1 @ U2, m1 + m2, first.system_dim, first.queries + second.queries)


def transformed_block(block: np.ndarray, p) -> np.ndarray:
    """``p`` applied to the singular values of ``block``.

    Even ``p`` gives ``sum_i p(a_i) |r_i><r_i|`` over right singular vectors;
    odd ``p`` gives ``sum_i p(a_i) |l_i><r_i|``.
    """
    U, s, V = svd(block)
    vals = np.asarray(p(s), dtype=float)
    if np.any(np.abs(vals) > 1 + 1e-9):
        raise InvalidInputError("polynomial exceeds 1 in magnitude on a singular value")
    vals = np.clip(vals, -1.0, 1.0)
    if p.parity == "even":
        return (V * vals) @ dagger(V)
    if p.parity == "odd":
        return (U * vals) @ dagger(V)
    raise InvalidInputError("singular value transformation needs a definite parity")


def apply_svt(be: BlockEncoding, p) -> BlockEncoding:
    """Matrix-level singular value transformation followed by dilation.

    ``p`` is any callable with ``degree`` and ``parity`` attributes. The query
    cost is ``deg(p)`` applications of ``be`` (each costing ``be.queries``).
    """
    P = transformed_block(encoded_block(be), p)
    return dilate(P, queries=p.degree * max(be.queries, 1))


@dataclass(frozen=True)
class QuantumChannel:
    """Channel in Kraus form on a fixed input/output dimension."""

    kraus_ops: tuple
    dim: int = field(init=False)

    def __post_init__(self):
        ops = tuple(as_matrix(K) for K in self.kraus_ops)
        if not ops:
            raise InvalidInputError("channel needs at least one Kraus operator")
        shape = ops[0].shape
        if shape[0] != shape[1] or any(K.shape != shape for K in ops):
            raise InvalidInputError("Kraus operators must share one square shape")
        object.__setattr__(self, "kraus_ops", ops)
        object.__setattr__(self, "dim", shape[0])

    @classmethod
    def unitary_channel(cls, U) -> "QuantumChannel":
        return cls((U,))

    def is_trace_preserving(self, tol: float = DENSITY_TOL) -> bool:
        S = sum(dagger(K) @ K for K in self.kraus_ops)
        return spectral_norm(S - np.eye(self.dim)) <= tol

    def apply(self, rho) -> np.ndarray:
        return sum(K @ rho @ dagger(K) for K in self.kraus_ops)

    def apply_pure(self, psi) -> np.ndarray:
        psi = np.asarray(psi, dtype=complex)
        return self.apply(np.outer(psi, np.conj(psi)))

    def then(self, other: "QuantumChannel") -> "QuantumChannel":
        """Sequential composition: ``self`` first, then ``other``."""
        ops = [B @ A for B in other.kraus_ops for A in self.kraus_ops]
        return QuantumChannel(tuple(ops)).compressed()

    def choi(self) -> np.ndarray:
        d = self.dim
        C = np.zeros((d * d, d * d), dtype=complex)
        for K in self.kraus_ops:
            v = K.reshape(-1)  # row-major vec: (out, in)
            C += np.outer(v, np.conj(v))
        return C

    def compressed(self, tol: float = 1e-14) -> "QuantumChannel":
        """Equivalent channel with at most ``d^2`` Kraus operators."""
        d = self.dim
        if len(self.kraus_ops) <= d * d:
            return self
        w, V = np.linalg.eigh(self.choi())
        keep = w > tol * max(w.max(), 1.0)
        ops = tuple((np.sqrt(wi) * V[:, i]).reshape(d, d) for i, wi in enumerate(w) if keep[i])
        return QuantumChannel(ops)

    @property
    def unitary(self) -> np.ndarray:
        if len(self.kraus_ops) != 1 or not is_unitary(self.kraus_ops[0]):
            raise InvalidInputError("channel is not a single unitary")
        return self.kraus_ops[0]


def identity_channel(dim: int) -> QuantumChannel:
    return QuantumChannel((np.eye(dim, dtype=complex),))


def apply_channel(ch: QuantumChannel, rho) -> np.ndarray:
    """``sum_i K_i rho K_i^dag`` after validating ``rho`` as a density operator."""
    return ch.apply(_require_density(rho))


def _require_density(rho, tol: float = DENSITY_TOL) -> np.ndarray:
    rho = as_matrix(rho)
    if rho.shape[0] != rho.shape[1]:
        raise InvalidInputError("density operator must be square")
    if spectral_norm(rho - dagger(rho)) > tol:
        raise InvalidInputError("density operator must be hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise InvalidInputError("density operator must have unit trace")
    if np.linalg.eigvalsh((rho + dagger(rho)) / 2).min() < -tol:
        raise InvalidInputError("density operator must be positive semi-definite")
    return rho


def trace_distance(rho, sigma) -> float:
    """Half the trace norm of ``rho - sigma``."""
    rho = _require_density(rho)
    sigma = _require_density(sigma)
    diff = rho - sigma
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh((diff + dagger(diff)) / 2))))


def channel_from_block(be: BlockEncoding, V_target) -> tuple[QuantumChannel, float]:
    """Channel obtained by running ``be`` on ``|0^m>`` ancillas and discarding them.

    Returns the channel and the diamond-norm bound ``4 ||A - V_target||``.
    """
    V = require_unitary(V_target, name="V_target")
    if V.shape[0] != be.system_dim:
        raise InvalidInputError("target dimension differs from the encoded system")
    d = be.system_dim
    U = be.unitary.reshape(2**be.ancillas_m, d, 2**be.ancillas_m, d)
    ops = tuple(U[b, :, 0, :] for b in range(2**be.ancillas_m))
    bound = 4.0 * spectral_norm(encoded_block(be) - V)
    return QuantumChannel(ops), bound


def block_measure(be: BlockEncoding) -> QuantumChannel:
    """Two-query block-measurement channel on ``flag (x) system``.

    Applies ``U_A``, flips the flag when the ancillas read ``|0^m>``, applies
    ``U_A^dag`` and traces out the ancillas (which start in ``|0^m>``).
    """
    m, d = be.ancillas_m, be.system_dim
    a = 2**m
    U = be.unitary
    zero = np.zeros(a)
    zero[0] = 1.0
    P0 = np.kron(np.diag(zero), np.eye(d))
    X = np.array([[0, 1], [1, 0]], dtype=complex)
    C = np.kron(X, P0) + np.kron(np.eye(2), np.eye(a * d) - P0)
    W = np.kron(np.eye(2), dagger(U)) @ C @ np.kron(np.eye(2), U)
    W = W.reshape(2, a, d, 2, a, d)
    ops = tuple(W[:, b, :, :, 0, :].reshape(2 * d, 2 * d) for b in range(a))
    return QuantumChannel(ops)


def ideal_block_measure(Pi) -> QuantumChannel:
    """Unitary channel of ``X (x) Pi + I (x) (I - Pi)``."""
    Pi = as_matrix(Pi)
    d = Pi.shape[0]
    X = np.array([[0, 1], [1, 0]], dtype=complex)
    return QuantumChannel.unitary_channel(np.kron(X, Pi) + np.kron(np.eye(2), np.eye(d) - Pi))


def diamond_distance_unitary(U, V) -> float:
    """Exact diamond distance between the channels of two unitaries.

    Equal to ``2 sqrt(1 - d^2)`` where ``d`` is the distance from the origin to
    the convex hull of the eigenvalues of ``U^dag V``. Those eigenvalues lie on
    the unit circle; if they fit in an arc shorter than pi, ``d`` is the cosine
    of half the arc, otherwise the hull contains the origin.
    """
    U = require_unitary(U, name="U")
    V = require_unitary(V, name="V")
    if U.shape != V.shape:
        raise InvalidInputError("dimension mismatch")
    ev = np.linalg.eigvals(dagger(U) @ V)
    ang = np.sort(np.mod(np.angle(ev), 2 * np.pi))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
    arc = 2 * np.pi - gaps.max()
    if arc >= np.pi:
        return 2.0
    d = math.cos(arc / 2)
    return 2.0 * math.sqrt(max(0.0, 1.0 - d * d))


def _choi(ops) -> np.ndarray:
    """Choi matrix ``sum_ij Phi(|i><j|) (x) |i><j|`` ordered ``(output, input)``."""
    return sum(np.outer(K.reshape(-1), np.conj(K.reshape(-1))) for K in ops)


def diamond_norm_bounds(ch1: QuantumChannel, ch2: QuantumChannel,
                        input_isometry=None) -> tuple[float, float]:
    """Lower and upper bounds on ``||ch1 - ch2||_diamond`` without an SDP solver.

    ``input_isometry`` (shape ``dim x d_in``) restricts both channels to inputs
    of the form ``E rho E^dag``, for example a flag qubit prepared in ``|0>``.
    With ``J`` the Choi matrix of the difference:

    * the maximally entangled input gives ``||J||_1 / d_in <= ||.||_diamond``;
    * ``Y0 = Y1 = |J|`` is feasible for the dual of the diamond-norm program,
      giving ``||.||_diamond <= ||Tr_out |J| ||``;
    * when ``ch2`` is a single isometry ``V``, any Kraus operator ``K`` of
      ``ch1`` gives ``2 ||K - V|| + 1 - s_min(K)^2`` (the ``K`` branch moves
      the state by at most ``2 ||K - V||`` and the other branches carry the
      leftover weight).

    The smaller upper bound is returned.
    """
    if ch1.dim != ch2.dim:
        raise InvalidInputError("channels act on different dimensions")
    E = np.eye(ch1.dim) if input_isometry is None else as_matrix(input_isometry)
    if E.shape[0] != ch1.dim or spectral_norm(dagger(E) @ E - np.eye(E.shape[1])) > 1e-10:
        raise InvalidInputError("input_isometry must be an isometry into the channel input")
    d_out, d_in = ch1.dim, E.shape[1]
    J = _choi([K @ E for K in ch1.kraus_ops]) - _choi([K @ E for K in ch2.kraus_ops])
    J = (J + dagger(J)) / 2
    w, V = np.linalg.eigh(J)
    lower = float(np.abs(w).sum()) / d_in
    absJ = (V * np.abs(w)) @ dagger(V)
    reduced = np.einsum("oioj->ij", absJ.reshape(d_out, d_in, d_out, d_in))
    upper = float(np.linalg.eigvalsh((reduced + dagger(reduced)) / 2).max())
    if len(ch2.kraus_ops) == 1:
        VE = ch2.kraus_ops[0] @ E
        if spectral_norm(dagger(VE) @ VE - np.eye(d_in)) <= 1e-10:
            for K in ch1.kraus_ops:
                KE = K @ E
                s_min = np.linalg.svd(KE, compute_uv=False).min()
                upper = min(upper, 2.0 * spectral_norm(KE - VE) + 1.0 - s_min**2)
    return lower, upper


def flag_zero_isometry(system_dim: int) -> np.ndarray:
    """``|0> (x) I``: embeds the system with a flag qubit prepared in ``|0>``."""
    return np.vstack([np.eye(system_dim), np.zeros((system_dim, system_dim))])
