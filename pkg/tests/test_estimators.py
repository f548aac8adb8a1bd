import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import binom

from coherent_estimation import blockenc as be
from coherent_estimation import costs
from coherent_estimation import estimators as est
from coherent_estimation.numerics import InvalidInputError, haar_unitary, random_state
from coherent_estimation.polynomials import amplifying_poly, solve_r


def fejer_probabilities(value, total_bits, shift):
    """Closed-form single-copy readout distribution ``sin^2(pi u) / (N^2 sin^2(pi u / N))``."""
    N = 2**total_bits
    u = value * N - shift - np.arange(N)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.sin(np.pi * u) ** 2 / (N**2 * np.sin(np.pi * u / N) ** 2)
    return np.where(np.abs(np.sin(np.pi * u / N)) < 1e-14, 1.0, p)


def median_distribution(value, n, plan):
    """Classical lower-median distribution of ``M`` independent readouts."""
    p = fejer_probabilities(value, plan.total_bits, plan.shift)
    grouped = p.reshape(2**n, 2**plan.extra_bits).sum(axis=1)
    F = np.clip(np.cumsum(grouped), 0.0, 1.0)
    k = (plan.copies + 1) // 2
    cdf = binom.sf(k - 1, plan.copies, F)
    return np.diff(np.concatenate([[0.0], cdf]))


class TestInstances:
    def test_allowed_set(self):
        xs = np.linspace(0, 0.999, 1000)
        got = np.array([est.allowed(x, 1, 0.5) for x in xs])
        want = ((xs > 0.25) & (xs < 0.5)) | (xs > 0.75)
        assert np.array_equal(got, want)

    @given(st.integers(1, 5), st.floats(0.01, 0.9), st.integers(0, 10_000))
    def test_generated_instances_obey_promise(self, n, alpha, seed):
        inst = est.gen_instance(n, alpha, 3, seed)
        assert est.verify_promise(inst)

    def test_gap_value_breaks_promise(self):
        inst = est.gen_instance(3, 0.2, 2, 0)
        bad = inst.with_values([0.2 / 8 * 0.5, inst.values[1]])
        assert not est.verify_promise(bad)
        assert not est.verify_promise(est.inject_gap_value(inst, 0, 5, 0.3))

    def test_generation_is_deterministic(self):
        a, b = est.gen_instance(3, 0.3, 4, 11), est.gen_instance(3, 0.3, 4, 11)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.eigenbasis, b.eigenbasis)

    def test_operators(self, rng):
        inst = est.gen_instance(2, 0.3, 3, 1, "hamiltonian")
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(inst.hamiltonian)), np.sort(inst.values), atol=1e-12)
        np.testing.assert_allclose(be.encoded_block(inst.block_encoding), inst.hamiltonian, atol=1e-12)
        assert inst.block_encoding.queries == 1

    @pytest.mark.parametrize("kwargs", [dict(values=[1.0]), dict(values=[-0.1]), dict(kind="other")])
    def test_invalid_instance(self, kwargs):
        args = dict(n_bits=2, alpha=0.3, values=[0.5], eigenbasis=np.eye(1), kind="unitary")
        args.update(kwargs)
        with pytest.raises(InvalidInputError):
            est.RoundingPromiseInstance(**args)


class TestBits:
    def test_binary_fraction(self):
        lam = 0b1011 / 16
        assert est.bit_k(lam, 4, 2) == 0
        assert est.low_bits(lam, 4, 2) == 0b11

    def test_zero(self):
        assert est.floor_estimate(0.0, 5) == 0
        assert all(est.bit_k(0.0, 5, k) == 0 for k in range(5))

    def test_floor(self):
        assert est.floor_estimate(0.3, 3) == 2

    def test_out_of_range(self):
        with pytest.raises(InvalidInputError):
            est.bit_k(0.3, 3, 3)
        with pytest.raises(InvalidInputError):
            est.floor_estimate(1.0, 3)

    def test_offsets_and_gaps(self):
        assert est.bit_offset(1, 0.5) == pytest.approx(5 / 16)
        assert est.bit_gap(1, 0.5, "linear") == pytest.approx(1 / 8)
        assert est.bit_gap(0, 0.5, "linear") == pytest.approx(1 / 4)
        with pytest.raises(InvalidInputError):
            est.bit_gap(0, 0.5, "cubic")

    @pytest.mark.parametrize("alpha", [0.05, 0.3, 0.7])
    @pytest.mark.parametrize("k", [0, 1, 3])
    def test_exact_gap_is_attained_on_allowed_values(self, alpha, k):
        # |cos^2(pi lambda^(k)) - 1/2| over allowed values of one bin never
        # drops below the exact gap, and the linear rule is never larger.
        n = k + 1
        xs = np.linspace(0, 1, 20001, endpoint=False)
        vals = [x for x in xs if est.allowed(x, n, alpha)]
        worst = min(abs(math.cos(math.pi * (2 ** (n - k - 1) * (v - est.low_bits(v, n, k) / 2**n)
                                            + est.bit_offset(k, alpha))) ** 2 - 0.5) for v in vals)
        assert worst >= est.bit_gap(k, alpha) - 1e-4
        assert est.bit_gap(k, alpha, "linear") <= est.bit_gap(k, alpha) + 1e-15

    def test_error_budget(self):
        assert est.amplification_error(0.1, 3) == pytest.approx((1 - 1e-3) * 0.01 / 8)
        budget = est.stage_errors(0.2, 5)
        assert sum(budget) == pytest.approx(0.2 * (1 - 2**-5))


class TestTextbook:
    def test_plan_example(self):
        plan = est.textbook_plan(3, 0.25, 0.1)
        assert plan.extra_bits == 1
        assert plan.delta_med == pytest.approx(0.0016)
        assert plan.copies == math.ceil(math.log(1 / 0.0016) / (2 * (8 / math.pi**2 - 0.5) ** 2)) == 34
        assert plan.query_count == 15 * 34 == 510

    def test_constants(self):
        assert est.sinc_squared(0.5) == pytest.approx(4 / math.pi**2)
        assert est.ROUNDING_GAP == pytest.approx(0.3106, abs=1e-4)

    def test_shift_centres_allowed_interval(self):
        plan = est.textbook_plan(2, 0.1, 0.1)
        alpha_n = 0.1 * 2**plan.extra_bits
        assert plan.shift == pytest.approx((1 + alpha_n) / 2)
        assert est.textbook_plan(2, 0.5, 0.1).extra_bits == 0

    def test_readout_matches_fejer_kernel(self, rng):
        vals = rng.uniform(0, 1, size=4)
        amp = est.readout_amplitudes(vals, 4, 0.3)
        for j, v in enumerate(vals):
            np.testing.assert_allclose(np.abs(amp[j]) ** 2, fejer_probabilities(v, 4, 0.3), atol=1e-12)

    @pytest.mark.parametrize("n, alpha, delta", [(2, 0.3, 0.2), (1, 0.6, 0.1), (3, 0.25, 0.3)])
    def test_output_matches_classical_median(self, n, alpha, delta):
        inst = est.gen_instance(n, alpha, 3, 5)
        _, rep = est.textbook_pe(inst, delta)
        plan = est.textbook_plan(n, alpha, delta)
        for j, v in enumerate(inst.values):
            np.testing.assert_allclose(rep.output_distribution[j], median_distribution(v, n, plan), atol=1e-9)
        assert min(rep.per_eigenstate_success) >= 1 - delta
        assert rep.query_count == costs.cost_textbook_pe(n, alpha, delta).queries
        assert rep.flavor.with_garbage and rep.flavor.garbage_qubits == plan.garbage_qubits

    def test_budget_guard(self):
        inst = est.gen_instance(3, 0.01, 2, 0)
        with pytest.raises(est.SimulationBudgetError):
            est.textbook_pe(inst, 0.1)

    def test_needs_unitary_kind(self):
        with pytest.raises(InvalidInputError):
            est.textbook_pe(est.gen_instance(2, 0.3, 2, 0, "hamiltonian"), 0.1)


class TestIterativePhaseBits:
    def test_signal_encoding_eigenvalues(self, rng):
        lam = rng.uniform(0, 1, size=3)
        B = haar_unitary(3, rng)
        G = (B * np.exp(2j * np.pi * lam)) @ B.conj().T
        A = be.encoded_block(est.signal_encoding(G, 1))
        diag = np.diag(B.conj().T @ A @ B)
        np.testing.assert_allclose(diag, np.cos(np.pi * lam) * np.exp(1j * np.pi * lam), atol=1e-12)

    @pytest.mark.parametrize("k", [0, 1, 2])
    def test_bit_block_is_polynomial_of_cosine(self, k):
        n, alpha, delta = 3, 0.3, 0.1
        inst = est.gen_instance(n, alpha, 2, 3)
        circ = est.pe_bit_circuit(inst, k, delta)
        A, _ = amplifying_poly(est.bit_gap(k, alpha), est.amplification_error(delta))
        top = circ.unitary[: 2**k * 2, : 2**k * 2]
        for D in range(2**k):
            lam_k = 2 ** (n - k - 1) * (inst.values - D / 2**n) + est.bit_offset(k, alpha)
            blk = top[D * 2:(D + 1) * 2, D * 2:(D + 1) * 2]
            got = np.diag(inst.eigenbasis.conj().T @ blk @ inst.eigenbasis)
            np.testing.assert_allclose(got, A(np.cos(np.pi * lam_k) ** 2), atol=1e-9)
        assert circ.query_count == 2 ** (n - k) * A.degree

    def test_bit_values(self):
        n, delta = 3, 0.05
        inst = est.gen_instance(n, 0.3, 3, 9)
        for k in range(n):
            circ = est.pe_bit_circuit(inst, k, delta)
            V = circ.unitary
            for j in range(inst.dim):
                D = est.low_bits(inst.values[j], n, k)
                psi = np.zeros(2 * 2**k * inst.dim, dtype=complex)
                psi[D * inst.dim:(D + 1) * inst.dim] = inst.eigenbasis[:, j]
                out = V @ psi
                p1 = np.linalg.norm(out[2**k * inst.dim:]) ** 2
                want = est.bit_k(inst.values[j], n, k)
                assert (p1 if want else 1 - p1) >= 1 - delta**2 / 8


class TestEnergyBits:
    def test_comparator_block(self):
        np.testing.assert_allclose(be.encoded_block(est.comparator_encoding(2, 1)), np.diag([0, 0.5]), atol=1e-12)
        for n, k in [(3, 2), (4, 1), (4, 3)]:
            W = be.encoded_block(est.comparator_encoding(n, k))
            np.testing.assert_allclose(W, np.diag(2 * np.arange(2**k) / 2**n), atol=1e-12)

    @pytest.mark.parametrize("k", [0, 1, 2])
    def test_shifted_hamiltonian_matches_dense_formula(self, k):
        n, alpha = 3, 0.3
        inst = est.gen_instance(n, alpha, 2, 4, "hamiltonian")
        enc = est.shifted_hamiltonian_encoding(inst.block_encoding, n, k, alpha)
        W = np.diag(2 * np.arange(2**k) / 2**n)
        phi = est.bit_offset(k, alpha)
        dense = (0.5 * np.kron(np.eye(2**k), inst.hamiltonian) - 0.25 * np.kron(W, np.eye(2))
                 + phi * 2.0 ** (k - n) * np.eye(2**k * 2))
        np.testing.assert_allclose(be.encoded_block(enc), dense, atol=1e-12)
        lam_k = [2 ** (n - k - 1) * (v - D / 2**n) + phi for D in range(2**k) for v in inst.values]
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(dense)),
                                   np.sort(2.0 ** (k - n) * np.array(lam_k)), atol=1e-12)
        for D in range(2**k):
            part = est.shifted_hamiltonian_encoding(inst.block_encoding, n, k, alpha, D)
            np.testing.assert_allclose(be.encoded_block(part), dense[2 * D:2 * D + 2, 2 * D:2 * D + 2], atol=1e-12)

    def test_polynomial_degree_and_queries(self):
        n, k, alpha, delta = 3, 1, 0.3, 0.05
        plan = est.energy_bit_plan(n, k, alpha, delta)
        poly = est.energy_bit_polynomial(plan)
        A, _ = amplifying_poly(plan.eta - plan.delta_cos, plan.delta_amp)
        assert poly.degree == 4 * A.degree * plan.cos_terms
        inst = est.gen_instance(n, alpha, 2, 0, "hamiltonian")
        circ = est.ee_bit_circuit(inst.block_encoding, n, k, alpha, delta)
        assert circ.query_count == poly.degree
        assert circ.declared_garbage == 1 + n + 3

    def test_missing_block_encoding(self):
        with pytest.raises(InvalidInputError):
            est.ee_bit_circuit(None, 2, 0, 0.3, 0.1)
        with pytest.raises(InvalidInputError):
            est.iterative_ee_bit(est.gen_instance(2, 0.3, 2, 0), 0, 0.1)


class TestUncomputeAndStitch:
    def test_exact_uncompute_removes_garbage(self):
        d = 2
        answers, garbage = (1, 0), (0, 1)
        X = np.array([[0, 1], [1, 0]])
        U = sum(np.kron(np.kron(np.linalg.matrix_power(X, answers[j]), np.linalg.matrix_power(X, garbage[j])),
                        np.diag(np.eye(d)[j])) for j in range(d))
        ch, q = est.uncompute(est.BitCircuit(U, 1, 1, d, 7))
        assert q == 14
        psi = np.kron([1, 0], np.ones(d) / math.sqrt(d))
        ideal = (np.kron([0, 1], [1, 0]) + np.kron([1, 0], [0, 1])) / math.sqrt(2)
        rho = ch.apply_pure(psi)
        assert np.real(np.vdot(ideal, rho @ ideal)) == pytest.approx(1.0, abs=1e-12)

    def test_single_bit_stitch(self):
        inst = est.gen_instance(1, 0.3, 2, 0)
        ch, q = est.iterative_pe_bit(inst, 0, 0.1)
        stitched = est.stitch([ch], 1)
        np.testing.assert_allclose(stitched.kraus_ops[0], ch.kraus_ops[0])

    def test_stitch_dimension_check(self):
        ch = be.identity_channel(4)
        with pytest.raises(InvalidInputError):
            est.stitch([ch, ch], 2)
        with pytest.raises(InvalidInputError):
            est.stitch([ch], 2)

    def test_query_count_doubles(self):
        inst = est.gen_instance(2, 0.3, 2, 1)
        _, plain = est.improved_pe(inst, 0.1)
        _, unc = est.improved_pe(inst, 0.1, uncompute_output=True)
        assert unc.query_count == costs.cost_improved_pe(2, 0.3, 0.1, uncompute=True).queries
        assert unc.query_count == 2 * costs.cost_improved_pe(2, 0.3, 0.05).queries
        assert plain.query_count == costs.cost_improved_pe(2, 0.3, 0.1).queries

    def test_superposition_input(self):
        n, delta = 2, 0.1
        inst = est.gen_instance(n, 0.3, 2, 2)
        ch, _ = est.improved_pe(inst, delta, uncompute_output=True)
        B, f = inst.eigenbasis, inst.floors
        psi = np.kron(np.eye(2**n)[0], (B[:, 0] + B[:, 1]) / math.sqrt(2))
        ideal = (np.kron(np.eye(2**n)[f[0]], B[:, 0]) + np.kron(np.eye(2**n)[f[1]], B[:, 1])) / math.sqrt(2)
        assert be.trace_distance(ch.apply_pure(psi), np.outer(ideal, ideal.conj())) <= delta


class TestImprovedEstimators:
    @pytest.mark.parametrize("seed", range(3))
    def test_phase_estimation(self, seed):
        inst = est.gen_instance(3, 0.3, 4, seed)
        ch, rep = est.improved_pe(inst, 0.05)
        assert min(rep.per_eigenstate_success) >= 0.95
        assert rep.flavor.with_phases and not rep.flavor.with_garbage
        assert ch.is_trace_preserving()
        assert rep.query_count == sum(est.pe_bit_circuit(inst, k, dk).query_count
                                      for k, dk in enumerate(est.stage_errors(0.05, 3)))

    @pytest.mark.parametrize("position", [0.0, 0.25, 0.5, 0.75, 1.0])
    def test_gap_value_support(self, position):
        n, delta = 3, 0.05
        inst = est.inject_gap_value(est.gen_instance(n, 0.3, 3, 1), 0, 5, position)
        _, rep = est.improved_pe(inst, delta)
        M = inst.floors[0]
        row = rep.output_distribution[0]
        assert row[M] + row[(M - 1) % 2**n] >= 1 - delta
        assert all(p >= 1 - delta for p in rep.per_eigenstate_success[1:])

    def test_energy_estimation(self):
        inst = est.gen_instance(2, 0.3, 2, 3, "hamiltonian")
        ch, rep = est.improved_ee(inst, 0.1)
        assert min(rep.per_eigenstate_success) >= 0.9
        assert rep.query_count == costs.cost_improved_ee(2, 0.3, 0.1).queries
        _, _, garbage = est.improved_ee_channel(inst.block_encoding, 2, 0.3, 0.1)
        assert garbage == 1 + 2 + 3

    def test_kind_checks(self):
        with pytest.raises(InvalidInputError):
            est.improved_pe(est.gen_instance(2, 0.3, 2, 0, "hamiltonian"), 0.1)
        with pytest.raises(InvalidInputError):
            est.improved_ee(est.gen_instance(2, 0.3, 2, 0), 0.1)

    def test_dense_guard(self):
        inst = est.gen_instance(6, 0.3, 128, 0)
        with pytest.raises(est.SimulationBudgetError):
            est.improved_pe(inst, 0.1)


class TestHamiltonianSimulation:
    def test_zero_time(self):
        H = np.diag([0.3, -0.2])
        ch, q = est.hamsim_channel(be.dilate(H, 1), 0.0, 0.1)
        assert q == 0
        np.testing.assert_allclose(ch.kraus_ops[0], np.eye(2))

    @pytest.mark.parametrize("eps", [1e-1, 1e-3, 1e-6])
    def test_pauli_z(self, eps):
        H = np.diag([0.5, -0.5])
        enc, target = est.hamsim_encoding(be.dilate(H, 1), math.pi, eps)
        np.testing.assert_allclose(target, np.diag(np.exp(1j * np.pi * np.array([0.5, -0.5]))), atol=1e-14)
        A = be.encoded_block(enc)
        U, _, Vh = np.linalg.svd(A)
        assert be.diamond_distance_unitary(U @ Vh, target) <= eps / 2
        assert enc.queries == 3 * math.floor(solve_r(math.e * math.pi / 2, eps / 24)) + 3

    @given(st.integers(0, 10_000), st.floats(0.1, 20.0), st.sampled_from([1e-1, 1e-2, 1e-4]))
    def test_channel_bound_and_success(self, seed, t, delta):
        r = np.random.default_rng(seed)
        B = haar_unitary(3, r)
        H = (B * r.uniform(-1, 1, size=3)) @ B.conj().T
        eps = delta / 4
        enc, target = est.hamsim_encoding(be.dilate(H, 1), t, eps)
        _, bound = be.channel_from_block(enc, target)
        assert bound <= delta
        psi = random_state(3, r)
        assert np.linalg.norm(be.encoded_block(enc) @ psi) ** 2 >= 1 - 2 * eps + eps**2

    def test_non_hermitian_rejected(self):
        with pytest.raises(InvalidInputError):
            est.hamsim_encoding(be.dilate(np.array([[0, 0.5], [0, 0]])), 1.0, 0.1)


class TestAmplitudeEstimation:
    @staticmethod
    def problem(a2):
        psi = np.array([1.0, 0.0])
        v = np.array([math.sqrt(a2), math.sqrt(1 - a2)])
        R_pi = 2 * np.outer(v, v) - np.eye(2)
        R_psi = 2 * np.outer(psi, psi) - np.eye(2)
        return R_pi, R_psi, psi

    def test_encoding_block(self):
        R_pi, R_psi, psi = self.problem(0.37)
        A = be.encoded_block(est.amplitude_encoding(R_pi, R_psi))
        np.testing.assert_allclose(A, 0.37 * np.outer(psi, psi), atol=1e-12)
        assert est.amplitude_encoding(R_pi, R_psi).queries == 3

    def test_estimate(self):
        R_pi, R_psi, psi = self.problem(0.37)
        ch, rep = est.amplitude_estimate(R_pi, R_psi, psi, 4, 0.1)
        probs = rep.output_distribution[0]
        assert probs[5] + probs[4] >= 0.9
        assert est.sequential_fidelity(ch, psi, 4, runs=2) >= 1 - 2 * 0.1

    def test_zero_amplitude(self):
        n = 3
        ch, rep = est.amplitude_estimate(-np.eye(1), np.eye(1), np.array([1.0]), n, 0.1)
        probs = rep.output_distribution[0]
        assert probs[0] + probs[2**n - 1] >= 0.9

    def test_validation(self):
        R_pi, R_psi, psi = self.problem(0.3)
        with pytest.raises(InvalidInputError):
            est.amplitude_estimate(R_pi, R_psi, np.array([0.0, 1.0]), 2, 0.1)
        with pytest.raises(InvalidInputError):
            est.amplitude_encoding(np.diag([1.0, 0.5]), R_psi)
