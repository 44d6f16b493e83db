"""Hybrid dataset construction and JSON-lines serialization.

A dataset mixes a small labeled split measured at a high snapshot budget
with a large unlabeled split at a low budget, plus validation and test
splits. Construction derives one RNG substream per point from the
dataset seed, so serial and parallel builds produce identical bytes.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DatasetFormatError, InvalidArgument, NumericalFailure, VersionMismatch
from .quantum import (
    HamiltonianSpec,
    QuantumState,
    build_cluster_ising,
    build_xxz,
    exact_correlation,
    exact_entropy,
    ground_state,
    load_pauli_file,
)
from .seeding import TAG_PARAMS, TAG_RECORD, TAG_SOLVER, child_seed, derive_rng
from .shadows import MeasurementRecord, label_vector, sample_measurements

FORMAT_VERSION = 1
SYSTEMS = ("xxz", "cluster_ising", "pauli_file")
TASKS = ("entropy", "corr_x", "corr_z")

TIER_HIGH = "high"
TIER_LOW = "low"
TIER_UNLABELED = "unlabeled"

_SPLIT_CODES = {"labeled": "L", "unlabeled": "U", "validation": "val", "test": "test"}


@dataclass(frozen=True)
class DatasetConfig:
    """Knobs for one hybrid dataset.

    N is the chain length, n the pool size split into labeled and
    unlabeled parts by ratio r, m_l / m_u the high and low snapshot
    budgets. Validation points carry an m_l record internally but expose
    only its first m_u snapshots as features.
    """

    system: str
    N: int
    n: int
    r: float
    m_l: int
    m_u: int
    n_val: int
    task: str
    param_range: tuple[float, float] = (0.0, 2.0)
    use_params_as_features: bool = True
    seed: int = 0
    n_test: int = 120
    pauli_file: str | None = None

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise InvalidArgument(f"system must be one of {SYSTEMS}, got {self.system!r}")
        if self.task not in TASKS:
            raise InvalidArgument(f"task must be one of {TASKS}, got {self.task!r}")
        if self.N < 2:
            raise InvalidArgument("N must be >= 2")
        if self.n < 2:
            raise InvalidArgument("n must be >= 2")
        if not 0.0 < self.r < 1.0:
            raise InvalidArgument("r must lie strictly between 0 and 1")
        if self.m_u < 2 or self.m_l < self.m_u:
            raise InvalidArgument("need m_l >= m_u >= 2")
        if self.n_val < 1 or self.n_test < 1:
            raise InvalidArgument("n_val and n_test must be >= 1")
        lo, hi = self.param_range
        if not lo < hi:
            raise InvalidArgument("param_range must be an increasing pair")
        if self.system == "pauli_file" and not self.pauli_file:
            raise InvalidArgument("system 'pauli_file' needs a pauli_file path")

    @property
    def n_labeled(self) -> int:
        return int(round(self.r * self.n))

    @property
    def n_unlabeled(self) -> int:
        return self.n - self.n_labeled


@dataclass(eq=False)
class DataPoint:
    """One sampled system: parameters, measurement record, optional labels.

    Validation points keep their full high-budget record in full_record;
    ``record`` is its first m_u columns.
    """

    id: int
    params: tuple[float, ...]
    record: MeasurementRecord
    labels: np.ndarray | None
    tier: str
    full_record: MeasurementRecord | None = None

    def __post_init__(self):
        if self.tier not in (TIER_HIGH, TIER_LOW, TIER_UNLABELED):
            raise InvalidArgument(f"unknown tier {self.tier!r}")
        if self.tier == TIER_HIGH and self.labels is None:
            raise InvalidArgument("high-tier points must carry labels")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.float64)

    def __eq__(self, other):
        if not isinstance(other, DataPoint):
            return NotImplemented
        same_labels = (
            self.labels is None
            and other.labels is None
            or (
                self.labels is not None
                and other.labels is not None
                and np.array_equal(self.labels, other.labels)
            )
        )
        return (
            self.id == other.id
            and self.params == other.params
            and self.tier == other.tier
            and same_labels
            and self.record == other.record
            and self.full_record == other.full_record
        )


@dataclass(eq=False)
class HybridDataset:
    """Labeled / unlabeled / validation / test splits plus their config."""

    config: DatasetConfig
    labeled: list[DataPoint]
    unlabeled: list[DataPoint]
    validation: list[DataPoint]
    _test: list[DataPoint] = field(default_factory=list)
    _test_sealed: bool = False

    @property
    def test(self) -> list[DataPoint]:
        if self._test_sealed:
            raise InvalidArgument("test split is sealed in training scope")
        return self._test

    def seal_test(self):
        self._test_sealed = True

    def __eq__(self, other):
        if not isinstance(other, HybridDataset):
            return NotImplemented
        return (
            _header_fields(self.config) == _header_fields(other.config)
            and self.labeled == other.labeled
            and self.unlabeled == other.unlabeled
            and self.validation == other.validation
            and self._test == other._test
        )


# ---------------------------------------------------------------- sampling

def sample_parameters(config: DatasetConfig, count: int, rng: np.random.Generator):
    """Draw ``count`` parameter vectors for the configured system.

    xxz and cluster_ising vary one coupling uniformly over param_range
    (the partner coupling is fixed at 1). A file-defined system has no
    free parameters.
    """
    if count < 0:
        raise InvalidArgument("count must be >= 0")
    if config.system == "pauli_file":
        return [() for _ in range(count)]
    lo, hi = config.param_range
    draws = rng.uniform(lo, hi, size=count)
    return [(float(v),) for v in draws]


def _hamiltonian_for(config: DatasetConfig, params: tuple[float, ...]) -> HamiltonianSpec:
    if config.system == "xxz":
        return build_xxz(config.N, params[0], 1.0)
    if config.system == "cluster_ising":
        return build_cluster_ising(config.N, params[0], 1.0)
    ham = load_pauli_file(config.pauli_file)
    if ham.n_qubits != config.N:
        raise InvalidArgument(
            f"pauli file describes {ham.n_qubits} qubits, config says {config.N}"
        )
    return ham


def _exact_labels(config: DatasetConfig, state: QuantumState) -> np.ndarray:
    n = config.N
    if config.task == "entropy":
        return np.array([exact_entropy(state, tuple(range(1, j + 1))) for j in range(1, n)])
    axis = config.task[-1]
    return np.array([exact_correlation(state, 1, j, axis) for j in range(2, n + 1)])


def _build_point(config: DatasetConfig, pid: int, params: tuple[float, ...], split: str) -> DataPoint:
    try:
        energy, state = ground_state(
            _hamiltonian_for(config, params), seed=child_seed(config.seed, TAG_SOLVER, pid)
        )
    except NumericalFailure as exc:
        raise NumericalFailure(f"point {pid} (params {params}): {exc}") from exc
    rng = derive_rng(config.seed, TAG_RECORD, pid)
    if split == "labeled":
        record = sample_measurements(state, config.m_l, rng)
        return DataPoint(pid, params, record, label_vector(record, config.task), TIER_HIGH)
    if split == "unlabeled":
        record = sample_measurements(state, config.m_u, rng)
        return DataPoint(pid, params, record, None, TIER_UNLABELED)
    if split == "validation":
        full = sample_measurements(state, config.m_l, rng)
        truncated = full.take(np.arange(config.m_u))
        return DataPoint(
            pid, params, truncated, label_vector(full, config.task), TIER_LOW, full_record=full
        )
    record = sample_measurements(state, config.m_u, rng)
    return DataPoint(pid, params, record, _exact_labels(config, state), TIER_LOW)


def build_hybrid_dataset(config: DatasetConfig, threads: int = 1) -> HybridDataset:
    """Sample parameters, solve ground states, measure, and assemble splits.

    Labeled points carry m_l-snapshot records and estimated labels; test
    points carry exact labels from the solved state. Point RNG streams
    are keyed by id, so ``threads`` only changes wall time.
    """
    param_rng = derive_rng(config.seed, TAG_PARAMS)
    total = config.n + config.n_val + config.n_test
    all_params = sample_parameters(config, total, param_rng)

    jobs = []
    pid = 0
    for split, count in (
        ("labeled", config.n_labeled),
        ("unlabeled", config.n_unlabeled),
        ("validation", config.n_val),
        ("test", config.n_test),
    ):
        for _ in range(count):
            jobs.append((pid, all_params[pid], split))
            pid += 1

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(lambda j: _build_point(config, j[0], j[1], j[2]), jobs))
    else:
        points = [_build_point(config, pid, params, split) for pid, params, split in jobs]

    by_split = {"labeled": [], "unlabeled": [], "validation": [], "test": []}
    for (pid, _, split), point in zip(jobs, points):
        by_split[split].append(point)
    return HybridDataset(
        config,
        by_split["labeled"],
        by_split["unlabeled"],
        by_split["validation"],
        by_split["test"],
    )


# ---------------------------------------------------------------- masking

def mask_subset(point: DataPoint, indices) -> DataPoint:
    """Copy of a point restricted to the given snapshot indices (1-based).

    Labels are dropped; id and params are kept so lineage survives.
    """
    idx = [int(i) for i in indices]
    if not idx:
        raise InvalidArgument("index set is empty")
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise InvalidArgument("indices must be strictly increasing")
    if idx[0] < 1 or idx[-1] > point.record.m:
        raise InvalidArgument(f"indices outside 1..{point.record.m}")
    cols = np.asarray(idx, dtype=np.int64) - 1
    return DataPoint(point.id, point.params, point.record.take(cols), None, TIER_UNLABELED)


# ---------------------------------------------------------------- serialization

def _header_fields(config: DatasetConfig) -> dict:
    return {
        "version": FORMAT_VERSION,
        "system": config.system,
        "N": config.N,
        "n": config.n,
        "r": config.r,
        "m_l": config.m_l,
        "m_u": config.m_u,
        "n_val": config.n_val,
        "task": config.task,
        "seed": config.seed,
    }


def _hex_width(n_qubits: int) -> int:
    return math.ceil(n_qubits / 4)


def _encode_record(record: MeasurementRecord) -> tuple[list[str], list[str]]:
    n, m = record.n_qubits, record.m
    weights = 1 << np.arange(n - 1, -1, -1, dtype=np.int64)
    values = weights @ record.outcomes.astype(np.int64)
    width = _hex_width(n)
    bases = ["".join(_BASIS_LETTERS[c] for c in record.bases[:, j]) for j in range(m)]
    outcomes = [format(int(v), f"0{width}x") for v in values]
    return bases, outcomes


_BASIS_LETTERS = "XYZ"
_BASIS_CODES = {"X": 0, "Y": 1, "Z": 2}


def _decode_record(bases: list[str], outcomes: list[str], n_qubits: int) -> MeasurementRecord:
    m = len(bases)
    if m == 0 or len(outcomes) != m:
        raise ValueError("bases and outcomes lists must be equal-length and non-empty")
    width = _hex_width(n_qubits)
    basis_arr = np.empty((n_qubits, m), dtype=np.uint8)
    out_arr = np.empty((n_qubits, m), dtype=np.uint8)
    for j, (bstr, ostr) in enumerate(zip(bases, outcomes)):
        if len(bstr) != n_qubits:
            raise ValueError(f"basis string length {len(bstr)} != N={n_qubits}")
        if len(ostr) != width:
            raise ValueError(f"outcome hex length {len(ostr)} != {width}")
        try:
            basis_arr[:, j] = [_BASIS_CODES[ch] for ch in bstr]
        except KeyError as exc:
            raise ValueError(f"bad basis letter {exc.args[0]!r}") from None
        value = int(ostr, 16)
        if value >> n_qubits:
            raise ValueError(f"outcome value {ostr!r} has bits beyond qubit {n_qubits}")
        out_arr[:, j] = (value >> np.arange(n_qubits - 1, -1, -1)) & 1
    return MeasurementRecord(basis_arr, out_arr)


def _point_line(point: DataPoint, split_code: str) -> dict:
    record = point.full_record if point.full_record is not None else point.record
    bases, outcomes = _encode_record(record)
    return {
        "id": point.id,
        "split": split_code,
        "params": list(point.params),
        "m": record.m,
        "bases": bases,
        "outcomes": outcomes,
        "labels": None if point.labels is None else [float(x) for x in point.labels],
    }


def save_dataset(ds: HybridDataset, path):
    """Write a dataset as JSON lines: header, then one line per point."""
    lines = [json.dumps(_header_fields(ds.config), separators=(",", ":"))]
    for attr, code in _SPLIT_CODES.items():
        points = ds._test if attr == "test" else getattr(ds, attr)
        for point in points:
            lines.append(json.dumps(_point_line(point, code), separators=(",", ":")))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path, scope: str = "all") -> HybridDataset:
    """Read a JSON-lines dataset file.

    scope="train" seals the test split: touching ``.test`` afterwards
    raises, which keeps test labels out of any training path.
    """
    if scope not in ("all", "train"):
        raise InvalidArgument("scope must be 'all' or 'train'")
    with open(path, "r", encoding="utf-8") as fh:
        raw_lines = fh.read().splitlines()
    if not raw_lines:
        raise DatasetFormatError("empty dataset file", line=1)

    try:
        header = json.loads(raw_lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"bad header: {exc}", line=1) from None
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"format version {version!r}, expected {FORMAT_VERSION}", line=1)
    try:
        config = DatasetConfig(
            system=header["system"],
            N=int(header["N"]),
            n=int(header["n"]),
            r=float(header["r"]),
            m_l=int(header["m_l"]),
            m_u=int(header["m_u"]),
            n_val=int(header["n_val"]),
            task=header["task"],
            seed=int(header["seed"]),
            n_test=1,  # placeholder, not stored; recounted below
        )
    except KeyError as exc:
        raise DatasetFormatError(f"header missing key {exc.args[0]!r}", line=1) from None
    except InvalidArgument as exc:
        raise DatasetFormatError(f"bad header: {exc}", line=1) from None

    splits = {"L": [], "U": [], "val": [], "test": []}
    for lineno, raw in enumerate(raw_lines[1:], start=2):
        if not raw.strip():
            raise DatasetFormatError("blank line inside dataset", line=lineno)
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"bad point line: {exc}", line=lineno) from None
        try:
            split = obj["split"]
            if split not in splits:
                raise ValueError(f"unknown split {split!r}")
            record = _decode_record(obj["bases"], obj["outcomes"], config.N)
            if record.m != obj["m"]:
                raise ValueError(f"m={obj['m']} but {record.m} snapshots present")
            labels = obj["labels"]
            labels_arr = None if labels is None else np.asarray(labels, dtype=np.float64)
            params = tuple(float(v) for v in obj["params"])
            if split == "L":
                point = DataPoint(obj["id"], params, record, labels_arr, TIER_HIGH)
            elif split == "U":
                if labels_arr is not None:
                    raise ValueError("unlabeled point carries labels")
                point = DataPoint(obj["id"], params, record, None, TIER_UNLABELED)
            elif split == "val":
                if record.m < config.m_u:
                    raise ValueError("validation record shorter than m_u")
                truncated = record.take(np.arange(config.m_u))
                point = DataPoint(
                    obj["id"], params, truncated, labels_arr, TIER_LOW, full_record=record
                )
            else:
                point = DataPoint(obj["id"], params, record, labels_arr, TIER_LOW)
        except (KeyError, ValueError, TypeError) as exc:
            key = exc.args[0] if isinstance(exc, KeyError) else exc
            raise DatasetFormatError(f"bad point line: {key}", line=lineno) from None
        splits[split].append(point)

    config = replace(config, n_test=max(1, len(splits["test"])))
    ds = HybridDataset(config, splits["L"], splits["U"], splits["val"], splits["test"])
    ids = [p.id for pts in (ds.labeled, ds.unlabeled, ds.validation, ds._test) for p in pts]
    if len(set(ids)) != len(ids):
        raise DatasetFormatError("duplicate point ids")
    if scope == "train":
        ds.seal_test()
    return ds
