"""Spin-chain Hamiltonians, ground states, and exact subsystem properties.

Everything works on state vectors of N qubits indexed 1..N, with qubit 1
mapped to the most significant bit of the computational basis index.
Hamiltonians are kept as sums of Pauli strings and applied by bit
manipulation; the full matrix is never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DatasetFormatError, InvalidArgument, NumericalFailure
from .seeding import derive_rng

_AXES = frozenset("IXYZ")

MAX_QUBITS = 16
_KRYLOV_CAP = 200
_RESIDUAL_TOL = 1e-10
_MAX_RESTARTS = 12


@dataclass(frozen=True)
class PauliString:
    """One weighted Pauli string, e.g. 0.5 * XXIZ."""

    axes: str
    coefficient: float

    def __post_init__(self):
        if len(self.axes) < 1:
            raise InvalidArgument("axes string is empty")
        bad = set(self.axes) - _AXES
        if bad:
            raise InvalidArgument(f"axes may only contain IXYZ, got {sorted(bad)}")
        if not np.isfinite(self.coefficient):
            raise InvalidArgument("coefficient must be finite")

    @property
    def n_qubits(self) -> int:
        return len(self.axes)


@dataclass(frozen=True)
class HamiltonianSpec:
    """Sum of Pauli strings on a fixed number of qubits."""

    n_qubits: int
    terms: tuple[PauliString, ...]
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.n_qubits < 1:
            raise InvalidArgument("need at least one qubit")
        for t in self.terms:
            if t.n_qubits != self.n_qubits:
                raise InvalidArgument(
                    f"term {t.axes!r} has length {t.n_qubits}, expected {self.n_qubits}"
                )


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Normalized pure state on n_qubits qubits (qubit 1 = MSB)."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        dim = amps.shape[0]
        if amps.ndim != 1 or dim < 2 or dim & (dim - 1):
            raise InvalidArgument("amplitude vector length must be a power of two >= 2")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > 1e-10:
            raise InvalidArgument(f"state not normalized: |v| = {norm!r}")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n_qubits(self) -> int:
        return int(self.amplitudes.shape[0]).bit_length() - 1


@dataclass(frozen=True)
class SubsystemSpec:
    """Contiguous-or-not subset of qubit indices, 1-based, ascending."""

    qubits: tuple[int, ...]

    def __post_init__(self):
        if len(self.qubits) == 0:
            raise InvalidArgument("subsystem is empty")
        if any(q < 1 for q in self.qubits):
            raise InvalidArgument("qubit indices are 1-based")
        if any(b <= a for a, b in zip(self.qubits, self.qubits[1:])):
            raise InvalidArgument("qubit indices must be strictly increasing")

    def check_range(self, n_qubits: int):
        if self.qubits[-1] > n_qubits:
            raise InvalidArgument(
                f"subsystem qubit {self.qubits[-1]} outside system of size {n_qubits}"
            )


def _as_subsystem(subsystem) -> SubsystemSpec:
    if isinstance(subsystem, SubsystemSpec):
        return subsystem
    return SubsystemSpec(tuple(sorted(int(q) for q in subsystem)))


# ---------------------------------------------------------------- builders

def build_xxz(n_qubits: int, j: float, j_prime: float) -> HamiltonianSpec:
    """Alternating-bond XXZ chain.

    Intra-dimer bonds (2i-1, 2i) carry coupling ``j``; inter-dimer bonds
    (2i, 2i+1) carry ``j_prime``. Each bond contributes XX + YY + ZZ.
    Zero-coefficient terms are dropped.
    """
    if n_qubits < 2 or n_qubits % 2:
        raise InvalidArgument("alternating-bond chain needs even n_qubits >= 2")
    bonds = [(2 * i - 1, 2 * i, j) for i in range(1, n_qubits // 2 + 1)]
    bonds += [(2 * i, 2 * i + 1, j_prime) for i in range(1, n_qubits // 2)]
    terms = []
    for a, b, coeff in bonds:
        if coeff == 0.0:
            continue
        for axis in "XYZ":
            axes = ["I"] * n_qubits
            axes[a - 1] = axis
            axes[b - 1] = axis
            terms.append(PauliString("".join(axes), float(coeff)))
    return HamiltonianSpec(n_qubits, tuple(terms), (float(j), float(j_prime)))


def build_cluster_ising(n_qubits: int, h1: float, h2: float) -> HamiltonianSpec:
    """Cluster Ising chain: -sum ZXZ - h1 sum X - h2 sum XX (open ends)."""
    if n_qubits < 3:
        raise InvalidArgument("cluster chain needs n_qubits >= 3")
    terms = []
    for i in range(1, n_qubits - 1):
        axes = ["I"] * n_qubits
        axes[i - 1] = "Z"
        axes[i] = "X"
        axes[i + 1] = "Z"
        terms.append(PauliString("".join(axes), -1.0))
    if h1 != 0.0:
        for i in range(n_qubits):
            axes = ["I"] * n_qubits
            axes[i] = "X"
            terms.append(PauliString("".join(axes), -float(h1)))
    if h2 != 0.0:
        for i in range(n_qubits - 1):
            axes = ["I"] * n_qubits
            axes[i] = "X"
            axes[i + 1] = "X"
            terms.append(PauliString("".join(axes), -float(h2)))
    return HamiltonianSpec(n_qubits, tuple(terms), (float(h1), float(h2)))


def parse_pauli_lines(lines) -> HamiltonianSpec:
    """Parse ``coefficient axes`` lines into a HamiltonianSpec.

    Blank lines and ``#`` comments are skipped. All axes strings must
    share one length.
    """
    terms = []
    width = None
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        fields = text.split()
        if len(fields) != 2:
            raise DatasetFormatError(
                f"expected '<coefficient> <axes>', got {raw.strip()!r}", line=lineno
            )
        try:
            coeff = float(fields[0])
        except ValueError:
            raise DatasetFormatError(f"bad coefficient {fields[0]!r}", line=lineno) from None
        axes = fields[1].upper()
        if set(axes) - _AXES:
            raise DatasetFormatError(f"bad axes string {fields[1]!r}", line=lineno)
        if width is None:
            width = len(axes)
        elif len(axes) != width:
            raise DatasetFormatError(
                f"axes length {len(axes)} differs from first term ({width})", line=lineno
            )
        terms.append(PauliString(axes, coeff))
    if not terms:
        raise DatasetFormatError("no terms found")
    return HamiltonianSpec(width, tuple(terms))


def load_pauli_file(path) -> HamiltonianSpec:
    """Read a Pauli-sum text file (one ``coefficient axes`` pair per line)."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_pauli_lines(fh)


# ---------------------------------------------------------------- application

def _compiled_terms(ham: HamiltonianSpec):
    """Per-term (complex weight, flip mask, phase mask) triples."""
    n = ham.n_qubits
    out = []
    for t in ham.terms:
        x_mask = 0
        zy_mask = 0
        n_y = 0
        for pos, ax in enumerate(t.axes):
            bit = 1 << (n - 1 - pos)
            if ax == "X":
                x_mask |= bit
            elif ax == "Y":
                x_mask |= bit
                zy_mask |= bit
                n_y += 1
            elif ax == "Z":
                zy_mask |= bit
        out.append((t.coefficient * (1j) ** n_y, x_mask, zy_mask))
    return out


def _apply_compiled(terms, vec: np.ndarray, idx: np.ndarray) -> np.ndarray:
    out = np.zeros_like(vec)
    for weight, x_mask, zy_mask in terms:
        src = idx ^ x_mask
        sign = 1.0 - 2.0 * (np.bitwise_count(src & zy_mask) & 1)
        out += weight * sign * vec[src]
    return out


def apply_hamiltonian(ham: HamiltonianSpec, vec: np.ndarray) -> np.ndarray:
    """H @ vec without building the matrix."""
    v = np.asarray(vec, dtype=np.complex128)
    dim = 1 << ham.n_qubits
    if v.shape != (dim,):
        raise InvalidArgument(f"vector has shape {v.shape}, expected ({dim},)")
    idx = np.arange(dim, dtype=np.int64)
    return _apply_compiled(_compiled_terms(ham), v, idx)


# ---------------------------------------------------------------- eigensolver

def ground_state(ham: HamiltonianSpec, seed: int = 0) -> tuple[float, QuantumState]:
    """Lowest eigenpair via Lanczos with full reorthogonalization.

    The start vector is drawn from ``seed``; on stagnation the iteration
    restarts from the current Ritz vector. Convergence requires a
    residual norm below 1e-10.
    """
    if ham.n_qubits > MAX_QUBITS:
        raise InvalidArgument(f"system size {ham.n_qubits} exceeds {MAX_QUBITS} qubits")
    dim = 1 << ham.n_qubits
    terms = _compiled_terms(ham)
    idx = np.arange(dim, dtype=np.int64)
    rng = derive_rng(seed)

    if not ham.terms:
        # Zero operator: any state is an eigenvector with eigenvalue 0.
        amps = np.zeros(dim, dtype=np.complex128)
        amps[0] = 1.0
        return 0.0, QuantumState(amps)

    def matvec(v):
        return _apply_compiled(terms, v, idx)

    k_max = min(dim, _KRYLOV_CAP)
    start = None
    best_residual = np.inf
    for restart in range(_MAX_RESTARTS):
        if start is None:
            start = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        start = start / np.linalg.norm(start)
        basis = np.empty((k_max, dim), dtype=np.complex128)
        alphas = np.empty(k_max)
        betas = np.empty(k_max)
        basis[0] = start
        k = 0
        while True:
            w = matvec(basis[k])
            alphas[k] = np.vdot(basis[k], w).real
            # Full reorthogonalization, two passes for stability.
            for _ in range(2):
                w -= basis[: k + 1].T @ (basis[: k + 1].conj() @ w)
            beta = np.linalg.norm(w)
            betas[k] = beta
            k += 1
            if k == k_max or beta < 1e-14:
                break
            basis[k] = w / beta

        tri = np.diag(alphas[:k]) + np.diag(betas[: k - 1], 1) + np.diag(betas[: k - 1], -1)
        evals, evecs = np.linalg.eigh(tri)
        energy = float(evals[0])
        ritz = basis[:k].T @ evecs[:, 0]
        ritz /= np.linalg.norm(ritz)
        residual = float(np.linalg.norm(matvec(ritz) - energy * ritz))
        if residual < _RESIDUAL_TOL:
            # Canonical global phase: largest amplitude made real positive.
            pivot = int(np.argmax(np.abs(ritz)))
            phase = ritz[pivot] / abs(ritz[pivot])
            amps = ritz * np.conj(phase)
            amps /= np.linalg.norm(amps)
            return energy, QuantumState(amps)
        best_residual = min(best_residual, residual)
        if beta < 1e-14 and k < k_max:
            # Invariant subspace that missed convergence: inject fresh noise.
            start = ritz + 1e-6 * (rng.standard_normal(dim) + 1j * rng.standard_normal(dim))
        else:
            start = ritz

    raise NumericalFailure(
        f"eigensolver stalled after {_MAX_RESTARTS} restarts "
        f"(best residual {best_residual:.3e}, krylov dim {k_max})"
    )


# ---------------------------------------------------------------- exact properties

def reduced_density_matrix(state: QuantumState, subsystem) -> np.ndarray:
    """Partial trace of |psi><psi| onto the given qubits."""
    sub = _as_subsystem(subsystem)
    n = state.n_qubits
    sub.check_range(n)
    if len(sub.qubits) > 12:
        raise InvalidArgument("reduced density matrix capped at 12 qubits")
    keep = [q - 1 for q in sub.qubits]
    rest = [i for i in range(n) if i not in keep]
    a = len(keep)
    tensor = state.amplitudes.reshape((2,) * n).transpose(keep + rest)
    mat = tensor.reshape(1 << a, 1 << (n - a))
    return mat @ mat.conj().T


def exact_entropy(state: QuantumState, subsystem) -> float:
    """Order-2 Renyi entropy -log2 tr(rho_A^2) of a subsystem."""
    rho = reduced_density_matrix(state, subsystem)
    purity = float(np.einsum("ij,ji->", rho, rho).real)
    a = int(np.log2(rho.shape[0]))
    purity = min(1.0, max(purity, 2.0 ** -a))
    return float(-np.log2(purity))


def exact_correlation(state: QuantumState, i: int, j: int, axis: str) -> float:
    """Two-point correlator <sigma_i^axis sigma_j^axis> for a pure state."""
    ax = axis.upper()
    if ax not in ("X", "Y", "Z"):
        raise InvalidArgument(f"axis must be x, y or z, got {axis!r}")
    n = state.n_qubits
    if i == j:
        raise InvalidArgument("correlation sites must differ")
    for q in (i, j):
        if not 1 <= q <= n:
            raise InvalidArgument(f"site {q} outside 1..{n}")
    axes = ["I"] * n
    axes[i - 1] = ax
    axes[j - 1] = ax
    op = HamiltonianSpec(n, (PauliString("".join(axes), 1.0),))
    val = np.vdot(state.amplitudes, apply_hamiltonian(op, state.amplitudes))
    return float(val.real)
