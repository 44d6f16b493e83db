"""Randomized single-qubit Pauli measurements and shadow-style estimators.

A measurement record stores, for each of m snapshots, the basis chosen
per qubit (X, Y or Z, uniform iid) and the measured bit. Observable,
purity and entropy estimators run on the record alone; no quantum state
is needed once the record exists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .quantum import QuantumState

BASIS_X, BASIS_Y, BASIS_Z = 0, 1, 2
_BASIS_CHARS = "XYZ"
_CODE_OF = {"X": BASIS_X, "Y": BASIS_Y, "Z": BASIS_Z}

# Measurement-frame rotations (basis eigenstates -> computational basis).
_H = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=np.complex128) / math.sqrt(2.0)
_HSDG = np.array([[1.0, -1.0j], [1.0, 1.0j]], dtype=np.complex128) / math.sqrt(2.0)
_ROTATIONS = np.stack([_H, _HSDG, np.eye(2, dtype=np.complex128)])

_PURITY_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class MeasurementRecord:
    """Per-qubit bases and outcome bits for m snapshots.

    Both arrays have shape (n_qubits, m); column j is snapshot j.
    Basis codes: 0 = X, 1 = Y, 2 = Z.
    """

    bases: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self):
        bases = np.ascontiguousarray(self.bases, dtype=np.uint8)
        outcomes = np.ascontiguousarray(self.outcomes, dtype=np.uint8)
        if bases.ndim != 2 or bases.shape != outcomes.shape:
            raise InvalidArgument("bases and outcomes must share shape (n_qubits, m)")
        if bases.shape[0] < 1 or bases.shape[1] < 1:
            raise InvalidArgument("record needs at least one qubit and one snapshot")
        if bases.max() > 2:
            raise InvalidArgument("basis codes are 0 (X), 1 (Y), 2 (Z)")
        if outcomes.max() > 1:
            raise InvalidArgument("outcomes are bits")
        object.__setattr__(self, "bases", bases)
        object.__setattr__(self, "outcomes", outcomes)

    @property
    def n_qubits(self) -> int:
        return self.bases.shape[0]

    @property
    def m(self) -> int:
        return self.bases.shape[1]

    def __eq__(self, other):
        if not isinstance(other, MeasurementRecord):
            return NotImplemented
        return np.array_equal(self.bases, other.bases) and np.array_equal(
            self.outcomes, other.outcomes
        )

    def take(self, columns) -> "MeasurementRecord":
        """Record restricted to the given snapshot columns (0-based)."""
        cols = np.asarray(columns, dtype=np.int64)
        return MeasurementRecord(self.bases[:, cols], self.outcomes[:, cols])


@dataclass(frozen=True)
class PauliObservable:
    """Tensor product of single-qubit Paulis on distinct sites."""

    support: tuple[tuple[int, str], ...]

    def __post_init__(self):
        if len(self.support) == 0:
            raise InvalidArgument("observable support is empty")
        sites = [q for q, _ in self.support]
        if len(set(sites)) != len(sites):
            raise InvalidArgument("observable sites must be distinct")
        norm = tuple((int(q), ax.upper()) for q, ax in self.support)
        for q, ax in norm:
            if q < 1:
                raise InvalidArgument("sites are 1-based")
            if ax not in _BASIS_CHARS:
                raise InvalidArgument(f"axis must be x, y or z, got {ax!r}")
        object.__setattr__(self, "support", norm)


# ---------------------------------------------------------------- sampling

def sample_measurements(state: QuantumState, m: int, rng: np.random.Generator) -> MeasurementRecord:
    """Draw m random-basis snapshots from a state.

    Bases are uniform iid over {X, Y, Z} per qubit per snapshot. For each
    snapshot the state is rotated into the chosen frame and the bit
    string is sampled from the exact Born distribution, qubit 1 first.
    """
    if m < 1:
        raise InvalidArgument("need at least one snapshot")
    n = state.n_qubits
    bases = rng.integers(0, 3, size=(m, n), dtype=np.uint8)
    uniforms = rng.random(size=(m, n))

    psi = np.broadcast_to(state.amplitudes, (m, state.amplitudes.shape[0]))
    for q in range(n):
        left = 1 << q
        right = 1 << (n - 1 - q)
        gates = _ROTATIONS[bases[:, q]]
        block = psi.reshape(m, left, 2, right)
        psi = np.einsum("mab,mlbr->mlar", gates, block).reshape(m, -1)

    probs = np.abs(psi) ** 2
    outcomes = np.empty((m, n), dtype=np.uint8)
    rows = np.arange(m)
    total = probs.sum(axis=1)
    cur = probs
    for q in range(n):
        half = cur.shape[1] // 2
        p0 = cur[:, :half].sum(axis=1)
        bit = (uniforms[:, q] * total >= p0).astype(np.uint8)
        outcomes[:, q] = bit
        cur = np.where(bit[:, None].astype(bool), cur[:, half:], cur[:, :half])
        total = np.where(bit.astype(bool), total - p0, p0)

    return MeasurementRecord(bases.T, outcomes.T)


# ---------------------------------------------------------------- observables

def estimate_observable(record: MeasurementRecord, observable: PauliObservable) -> float:
    """Shadow estimate of a Pauli-string expectation from one record.

    Each snapshot contributes the product over support qubits of
    3 * (+1 or -1) when the measured basis matches the observable axis,
    and 0 otherwise; the estimate is the snapshot mean.
    """
    n = record.n_qubits
    factors = np.ones(record.m)
    for q, ax in observable.support:
        if q > n:
            raise InvalidArgument(f"site {q} outside 1..{n}")
        row = q - 1
        code = _CODE_OF[ax]
        match = record.bases[row] == code
        signs = 1.0 - 2.0 * record.outcomes[row]
        factors *= np.where(match, 3.0 * signs, 0.0)
    return float(factors.mean())


def estimate_correlation(record: MeasurementRecord, i: int, j: int, axis: str) -> float:
    """Shadow estimate of <sigma_i^axis sigma_j^axis>."""
    if i == j:
        raise InvalidArgument("correlation sites must differ")
    return estimate_observable(record, PauliObservable(((i, axis), (j, axis))))


# ---------------------------------------------------------------- purity

def pair_factor(basis_a: str, bit_a: int, basis_b: str, bit_b: int) -> float:
    """Single-qubit overlap factor between two snapshots.

    Equals tr of the product of the two single-qubit snapshot estimates:
    5 for same basis and same bit, -4 for same basis and opposite bit,
    0.5 across different bases.
    """
    for basis in (basis_a, basis_b):
        if basis.upper() not in _BASIS_CHARS:
            raise InvalidArgument(f"basis must be X, Y or Z, got {basis!r}")
    for bit in (bit_a, bit_b):
        if bit not in (0, 1):
            raise InvalidArgument("outcome bits must be 0 or 1")
    if basis_a.upper() != basis_b.upper():
        return 0.5
    return 5.0 if bit_a == bit_b else -4.0


def _pair_factor_rows(bases_row: np.ndarray, bits_row: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """(hi-lo, m) block of the pair-factor matrix for one qubit."""
    ba = bases_row[lo:hi, None]
    oa = bits_row[lo:hi, None]
    same_basis = ba == bases_row[None, :]
    same_bit = oa == bits_row[None, :]
    return np.where(same_basis, np.where(same_bit, 5.0, -4.0), 0.5)


def estimate_purity(record: MeasurementRecord, subsystem) -> float:
    """U-statistic estimate of tr(rho_A^2) over all ordered snapshot pairs.

    Unbiased; can exceed [0, 1] at small m. Memory stays bounded by
    processing the pair matrix in row blocks.
    """
    qubits = _subsystem_rows(record, subsystem)
    m = record.m
    if m < 2:
        raise InvalidArgument("purity needs at least two snapshots")
    total = 0.0
    for lo in range(0, m, _PURITY_CHUNK):
        hi = min(lo + _PURITY_CHUNK, m)
        block = np.ones((hi - lo, m))
        for row in qubits:
            block *= _pair_factor_rows(record.bases[row], record.outcomes[row], lo, hi)
        total += float(block.sum())
    # Diagonal pairs always hit (same basis, same bit) on every qubit.
    total -= m * 5.0 ** len(qubits)
    return total / (m * (m - 1))


def estimate_entropy(record: MeasurementRecord, subsystem) -> float:
    """Order-2 Renyi entropy from the purity U-statistic, clamped to [0, |A|]."""
    qubits = _subsystem_rows(record, subsystem)
    p = estimate_purity(record, subsystem)
    return _entropy_from_purity(p, len(qubits))


def _entropy_from_purity(purity: float, a: int) -> float:
    clamped = min(1.0, max(purity, 2.0 ** -a))
    return float(-np.log2(clamped)) + 0.0


def _subsystem_rows(record: MeasurementRecord, subsystem) -> list[int]:
    qubits = sorted(int(q) for q in getattr(subsystem, "qubits", subsystem))
    if not qubits:
        raise InvalidArgument("subsystem is empty")
    if qubits[0] < 1 or qubits[-1] > record.n_qubits:
        raise InvalidArgument(f"subsystem outside 1..{record.n_qubits}")
    if len(set(qubits)) != len(qubits):
        raise InvalidArgument("subsystem qubits must be distinct")
    return [q - 1 for q in qubits]


def purity_variance_bound(m: int, a: int, purity: float) -> float:
    """Upper bound on the variance of the purity U-statistic."""
    if m < 2:
        raise InvalidArgument("bound defined for m >= 2")
    if a < 1:
        raise InvalidArgument("subsystem size must be >= 1")
    return 4.0 * (2.0 ** a * purity / m) + 2.0 * (2.0 ** (2 * a) / (m - 1)) ** 2


# ---------------------------------------------------------------- labels

def _prefix_purities(record: MeasurementRecord, n_prefixes: int) -> np.ndarray:
    """U-statistic purities for prefixes {1}, {1,2}, ..., one pass."""
    m = record.m
    if m < 2:
        raise InvalidArgument("purity needs at least two snapshots")
    sums = np.zeros(n_prefixes)
    for lo in range(0, m, _PURITY_CHUNK):
        hi = min(lo + _PURITY_CHUNK, m)
        block = np.ones((hi - lo, m))
        for row in range(n_prefixes):
            block *= _pair_factor_rows(record.bases[row], record.outcomes[row], lo, hi)
            sums[row] += block.sum()
    diag = 5.0 ** np.arange(1, n_prefixes + 1)
    return (sums - m * diag) / (m * (m - 1))


def label_vector(record: MeasurementRecord, task: str) -> np.ndarray:
    """Length N-1 estimated-label vector for a record.

    entropy: prefix Renyi-2 entropies for A = {1..j}, j = 1..N-1.
    corr_x / corr_z: correlators between qubit 1 and j, j = 2..N.
    """
    n = record.n_qubits
    if n < 2:
        raise InvalidArgument("labels need at least two qubits")
    if task == "entropy":
        purities = _prefix_purities(record, n - 1)
        return np.array([_entropy_from_purity(p, j + 1) for j, p in enumerate(purities)])
    if task in ("corr_x", "corr_z"):
        axis = task[-1]
        return np.array([estimate_correlation(record, 1, j, axis) for j in range(2, n + 1)])
    raise InvalidArgument(f"unknown task {task!r}")
