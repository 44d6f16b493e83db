"""Consistency-gated synthetic labeling for quantum property estimation.

The package simulates randomized Pauli measurements of spin-chain ground
states, estimates entanglement entropies and correlations from the
snapshots, and trains small regressors whose training pool grows through
an iterative select/retrain/validate loop.
"""

from .dataset import (
    DataPoint,
    DatasetConfig,
    HybridDataset,
    build_hybrid_dataset,
    load_dataset,
    mask_subset,
    sample_parameters,
    save_dataset,
)
from .engine import (
    AdmittedPoint,
    ConsistencyConfig,
    EngineState,
    consistency_variance,
    engine_iteration,
    retrain,
    run_engine,
    save_iteration_report,
    select_high_quality,
    validate,
)
from .errors import (
    ConfigError,
    DatasetFormatError,
    InvalidArgument,
    NumericalFailure,
    ShadowforgeError,
    UndefinedMetric,
    VersionMismatch,
)
from .learner import (
    FeatureSpec,
    LearnerConfig,
    Model,
    continue_training,
    featurize,
    load_model,
    predict,
    predict_many,
    r_squared,
    save_model,
    train_kernel,
    train_sl,
    train_ssl,
)
from .quantum import (
    HamiltonianSpec,
    PauliString,
    QuantumState,
    SubsystemSpec,
    apply_hamiltonian,
    build_cluster_ising,
    build_xxz,
    exact_correlation,
    exact_entropy,
    ground_state,
    load_pauli_file,
    reduced_density_matrix,
)
from .shadows import (
    MeasurementRecord,
    PauliObservable,
    estimate_correlation,
    estimate_entropy,
    estimate_observable,
    estimate_purity,
    label_vector,
    pair_factor,
    purity_variance_bound,
    sample_measurements,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
