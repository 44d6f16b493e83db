"""Deterministic RNG derivation.

Every stochastic routine in the package draws from a Generator derived
here, keyed by integers, so that serial and parallel execution paths
visit identical streams.
"""

from __future__ import annotations

import numpy as np

# Stream tags. Distinct per call site so substreams never collide.
TAG_PARAMS = 11
TAG_RECORD = 12
TAG_SOLVER = 13
TAG_TRAIN = 21
TAG_SELECT = 22
TAG_RETRAIN = 23


_MASK64 = (1 << 64) - 1


def derive_rng(*key: int) -> np.random.Generator:
    """Generator keyed by a tuple of integers (reduced mod 2**64)."""
    return np.random.default_rng(np.random.SeedSequence([int(k) & _MASK64 for k in key]))


def child_seed(*key: int) -> int:
    """Plain integer seed derived from a key tuple."""
    ss = np.random.SeedSequence([int(k) & _MASK64 for k in key])
    return int(ss.generate_state(1, np.uint64)[0])
