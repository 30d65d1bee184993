"""Named random substreams.

Every command takes one seed; components derive their own generator from
(seed, purpose-label) so streams never collide and runs replay exactly.
Labels are hashed with SHA-256, so the mapping is stable across platforms
and Python versions.
"""

import hashlib

import numpy as np


def _label_key(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def named_seed(seed: int, label: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & ((1 << 63) - 1), _label_key(label)])


def named_stream(seed: int, label: str) -> np.random.Generator:
    """Deterministic PCG64 generator for one (seed, purpose) pair."""
    return np.random.default_rng(named_seed(seed, label))
