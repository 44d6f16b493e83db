import numpy as np
import pytest

from oracles import dense_ground_energy, dense_matrix, dense_partial_trace
from shadowforge.errors import DatasetFormatError, InvalidArgument
from shadowforge.quantum import (
    HamiltonianSpec,
    PauliString,
    QuantumState,
    apply_hamiltonian,
    build_cluster_ising,
    build_xxz,
    exact_correlation,
    exact_entropy,
    ground_state,
    parse_pauli_lines,
    reduced_density_matrix,
)


def bond_axes(n, i, axis):
    chars = ["I"] * n
    chars[i - 1] = axis
    chars[i] = axis
    return "".join(chars)


class TestBuildXxz:
    def test_two_qubits_three_unit_terms(self):
        ham = build_xxz(2, 1.0, 0.0)
        assert len(ham.terms) == 3
        assert {t.axes for t in ham.terms} == {"XX", "YY", "ZZ"}
        assert all(t.coefficient == 1.0 for t in ham.terms)

    def test_four_qubit_term_counts_and_coefficients(self):
        ham = build_xxz(4, 1.0, 0.5)
        assert len(ham.terms) == 9
        strong = [t for t in ham.terms if t.coefficient == 1.0]
        weak = [t for t in ham.terms if t.coefficient == 0.5]
        assert len(strong) == 6 and len(weak) == 3
        assert {t.axes for t in strong} == {
            bond_axes(4, i, a) for i in (1, 3) for a in "XYZ"
        }
        assert {t.axes for t in weak} == {bond_axes(4, 2, a) for a in "XYZ"}

    def test_ten_qubit_term_count(self):
        rng = np.random.default_rng(0)
        ham = build_xxz(10, float(rng.uniform(0, 2)), float(rng.uniform(0, 2)))
        assert len(ham.terms) == 27

    def test_rejects_odd_or_small_n(self):
        with pytest.raises(InvalidArgument):
            build_xxz(3, 1.0, 1.0)
        with pytest.raises(InvalidArgument):
            build_xxz(0, 1.0, 1.0)


class TestBuildClusterIsing:
    def test_zero_fields_keep_single_term(self):
        ham = build_cluster_ising(3, 0.0, 0.0)
        assert len(ham.terms) == 1
        assert ham.terms[0].axes == "ZXZ"
        assert ham.terms[0].coefficient == -1.0

    def test_nine_qubit_term_count(self):
        ham = build_cluster_ising(9, 0.3, 1.7)
        assert len(ham.terms) == 7 + 9 + 8

    def test_four_qubit_groups(self):
        ham = build_cluster_ising(4, 1.0, 1.0)
        zxz = [t for t in ham.terms if sorted(t.axes) == ["I", "X", "Z", "Z"]]
        x = [t for t in ham.terms if sorted(t.axes) == ["I", "I", "I", "X"]]
        xx = [t for t in ham.terms if sorted(t.axes) == ["I", "I", "X", "X"]]
        assert (len(zxz), len(x), len(xx)) == (2, 4, 3)
        assert all(t.coefficient == -1.0 for t in ham.terms)

    def test_rejects_small_n(self):
        with pytest.raises(InvalidArgument):
            build_cluster_ising(2, 1.0, 1.0)


class TestApplyHamiltonian:
    def test_z_keeps_zero_state(self):
        ham = HamiltonianSpec(1, (PauliString("Z", 1.0),))
        out = apply_hamiltonian(ham, np.array([1.0, 0.0], dtype=complex))
        assert np.allclose(out, [1.0, 0.0])

    def test_x_flips_zero_state(self):
        ham = HamiltonianSpec(1, (PauliString("X", 1.0),))
        out = apply_hamiltonian(ham, np.array([1.0, 0.0], dtype=complex))
        assert np.allclose(out, [0.0, 1.0])

    def test_singlet_is_eigenvector(self, singlet):
        ham = build_xxz(2, 1.0, 0.0)
        v = singlet.amplitudes
        out = apply_hamiltonian(ham, v)
        assert np.allclose(out, -3.0 * v, atol=1e-12)
        assert np.allclose(out, dense_matrix(ham) @ v, atol=1e-12)

    def test_matches_dense_matvec_on_random_vectors(self):
        rng = np.random.default_rng(7)
        for ham in (build_xxz(4, 1.3, 0.4), build_cluster_ising(5, 0.8, 1.2)):
            dense = dense_matrix(ham)
            for _ in range(5):
                v = rng.normal(size=2 ** ham.n_qubits) + 1j * rng.normal(size=2 ** ham.n_qubits)
                assert np.allclose(apply_hamiltonian(ham, v), dense @ v, atol=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            apply_hamiltonian(build_xxz(2, 1.0, 0.0), np.zeros(8, dtype=complex))


class TestGroundState:
    def test_xxz2_singlet(self, singlet):
        energy, state = ground_state(build_xxz(2, 1.0, 0.0))
        assert abs(energy - (-3.0)) < 1e-8
        overlap = abs(np.vdot(state.amplitudes, singlet.amplitudes))
        assert abs(overlap - 1.0) < 1e-8

    def test_cluster3_energy(self):
        energy, _ = ground_state(build_cluster_ising(3, 0.0, 0.0))
        assert abs(energy - (-1.0)) < 1e-8

    def test_xxz8_matches_dense(self):
        ham = build_xxz(8, 1.0, 1.0)
        energy, state = ground_state(ham)
        assert abs(energy - dense_ground_energy(ham)) < 1e-8
        assert abs(np.linalg.norm(state.amplitudes) - 1.0) < 1e-10

    def test_seeded_determinism(self):
        ham = build_xxz(6, 0.7, 1.4)
        e1, s1 = ground_state(ham, seed=3)
        e2, s2 = ground_state(ham, seed=3)
        assert e1 == e2
        assert np.array_equal(s1.amplitudes, s2.amplitudes)

    def test_variational_bound(self):
        ham = build_cluster_ising(4, 0.9, 1.1)
        energy, _ = ground_state(ham)
        dense = dense_matrix(ham)
        rng = np.random.default_rng(5)
        for _ in range(100):
            v = rng.normal(size=16) + 1j * rng.normal(size=16)
            v = v / np.linalg.norm(v)
            rayleigh = float(np.real(v.conj() @ (dense @ v)))
            assert energy <= rayleigh + 1e-10


class TestHermiticity:
    def test_random_expectations_are_real(self):
        rng = np.random.default_rng(9)
        hams = [
            build_xxz(4, float(rng.uniform(0, 2)), float(rng.uniform(0, 2)))
            for _ in range(3)
        ] + [
            build_cluster_ising(5, float(rng.uniform(0, 2)), float(rng.uniform(0, 2)))
            for _ in range(3)
        ]
        for ham in hams:
            dim = 2 ** ham.n_qubits
            for _ in range(5):
                v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
                v = v / np.linalg.norm(v)
                val = complex(v.conj() @ apply_hamiltonian(ham, v))
                assert abs(val.imag) < 1e-10


class TestReducedDensityMatrix:
    def test_product_state(self, zero2):
        rho = reduced_density_matrix(zero2, (1,))
        assert np.allclose(rho, [[1.0, 0.0], [0.0, 0.0]], atol=1e-12)

    def test_bell_half_is_maximally_mixed(self, bell):
        rho = reduced_density_matrix(bell, (1,))
        assert np.allclose(rho, np.eye(2) / 2.0, atol=1e-12)

    def test_singlet_second_qubit(self, singlet):
        rho = reduced_density_matrix(singlet, (2,))
        assert np.allclose(rho, np.eye(2) / 2.0, atol=1e-12)

    def test_matches_dense_partial_trace(self):
        rng = np.random.default_rng(3)
        amps = rng.normal(size=32) + 1j * rng.normal(size=32)
        state = QuantumState(amps / np.linalg.norm(amps))
        for keep in ((1,), (2, 4), (1, 3, 5)):
            got = reduced_density_matrix(state, keep)
            want = dense_partial_trace(state.amplitudes, keep, 5)
            assert np.allclose(got, want, atol=1e-12)

    def test_is_valid_density_matrix(self):
        rng = np.random.default_rng(4)
        amps = rng.normal(size=16) + 1j * rng.normal(size=16)
        state = QuantumState(amps / np.linalg.norm(amps))
        rho = reduced_density_matrix(state, (2, 3))
        assert np.allclose(rho, rho.conj().T, atol=1e-12)
        eigs = np.linalg.eigvalsh(rho)
        assert eigs.min() >= -1e-10
        assert abs(eigs.sum() - 1.0) < 1e-10

    def test_out_of_range_subsystem(self, zero2):
        with pytest.raises(InvalidArgument):
            reduced_density_matrix(zero2, (3,))


class TestExactEntropy:
    def test_product_state_zero(self, zero4):
        assert abs(exact_entropy(zero4, (1, 2))) < 1e-12

    def test_bell_half_is_one_bit(self, bell):
        assert abs(exact_entropy(bell, (1,)) - 1.0) < 1e-12

    def test_xxz2_ground_state(self):
        _, state = ground_state(build_xxz(2, 1.0, 0.0))
        assert abs(exact_entropy(state, (1,)) - 1.0) < 1e-8

    def test_schmidt_symmetry(self):
        rng = np.random.default_rng(8)
        amps = rng.normal(size=64) + 1j * rng.normal(size=64)
        state = QuantumState(amps / np.linalg.norm(amps))
        for subset in ((1,), (1, 2), (2, 4, 5)):
            complement = tuple(q for q in range(1, 7) if q not in subset)
            assert abs(exact_entropy(state, subset) - exact_entropy(state, complement)) < 1e-8


class TestExactCorrelation:
    def test_z_eigenstate(self, zero2):
        assert abs(exact_correlation(zero2, 1, 2, "z") - 1.0) < 1e-12

    def test_singlet_anticorrelated(self, singlet):
        assert abs(exact_correlation(singlet, 1, 2, "z") - (-1.0)) < 1e-12

    def test_zero_transverse_correlation(self, zero2):
        assert abs(exact_correlation(zero2, 1, 2, "x")) < 1e-12

    def test_matches_dense_operator(self):
        _, state = ground_state(build_xxz(4, 1.0, 0.6))
        for i, j, axis in ((1, 3, "z"), (2, 4, "x"), (1, 4, "z")):
            axes = ["I"] * 4
            axes[i - 1] = axes[j - 1] = axis.upper()
            ham = HamiltonianSpec(4, (PauliString("".join(axes), 1.0),))
            want = float(
                np.real(state.amplitudes.conj() @ (dense_matrix(ham) @ state.amplitudes))
            )
            assert abs(exact_correlation(state, i, j, axis) - want) < 1e-10

    def test_symmetric_in_sites(self):
        _, state = ground_state(build_cluster_ising(4, 0.5, 1.5))
        for axis in ("x", "z"):
            a = exact_correlation(state, 1, 3, axis)
            b = exact_correlation(state, 3, 1, axis)
            assert abs(a - b) < 1e-12

    def test_equal_sites_rejected(self, zero2):
        with pytest.raises(InvalidArgument):
            exact_correlation(zero2, 1, 1, "z")


class TestPauliFileParsing:
    def test_parse_with_comments(self):
        lines = ["# molecular fragment", "-0.5 XIXZ", "1.25 ZZII", ""]
        ham = parse_pauli_lines(lines)
        assert ham.n_qubits == 4
        assert len(ham.terms) == 2
        assert ham.terms[0].coefficient == -0.5
        assert ham.terms[0].axes == "XIXZ"

    def test_mixed_lengths_rejected(self):
        with pytest.raises(DatasetFormatError):
            parse_pauli_lines(["1.0 XX", "1.0 XXX"])

    def test_garbage_line_rejected(self):
        with pytest.raises(DatasetFormatError):
            parse_pauli_lines(["1.0"])
