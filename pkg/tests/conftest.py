"""Shared fixtures: reference states and a small reusable dataset."""

import numpy as np
import pytest

from shadowforge.dataset import DatasetConfig, build_hybrid_dataset
from shadowforge.quantum import QuantumState


def _basis_state(n_qubits: int, index: int) -> QuantumState:
    amps = np.zeros(2 ** n_qubits, dtype=np.complex128)
    amps[index] = 1.0
    return QuantumState(amps)


@pytest.fixture(scope="session")
def zero1():
    return _basis_state(1, 0)


@pytest.fixture(scope="session")
def zero2():
    return _basis_state(2, 0)


@pytest.fixture(scope="session")
def zero4():
    return _basis_state(4, 0)


@pytest.fixture(scope="session")
def bell():
    amps = np.zeros(4, dtype=np.complex128)
    amps[0] = amps[3] = 1.0 / np.sqrt(2.0)
    return QuantumState(amps)


@pytest.fixture(scope="session")
def singlet():
    amps = np.zeros(4, dtype=np.complex128)
    amps[1] = 1.0 / np.sqrt(2.0)
    amps[2] = -1.0 / np.sqrt(2.0)
    return QuantumState(amps)


@pytest.fixture(scope="session")
def ghz4():
    amps = np.zeros(16, dtype=np.complex128)
    amps[0] = amps[15] = 1.0 / np.sqrt(2.0)
    return QuantumState(amps)


@pytest.fixture(scope="session")
def tiny_config():
    return DatasetConfig(
        system="xxz", N=4, n=20, r=0.4, m_l=64, m_u=16, n_val=8,
        task="entropy", seed=11, n_test=6,
    )


@pytest.fixture(scope="session")
def tiny_ds(tiny_config):
    return build_hybrid_dataset(tiny_config)
