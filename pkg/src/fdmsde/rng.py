"""Counter-based random streams.

Every source of randomness in the package is addressed by a top-level seed
plus a tuple of stream labels (strings or integers), e.g.
``stream(seed, "sim", step)``.  The labels are hashed into a Philox key, so
any component can be re-drawn independently of execution order: simulating
path blocks in parallel, or re-running a single training step in isolation,
yields exactly the same numbers.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _encode(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    if isinstance(part, str):
        digest = hashlib.blake2s(part.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"stream labels must be int or str, got {type(part).__name__}")


def stream(seed: int, *labels) -> np.random.Generator:
    """A Philox-backed generator for the substream named by `labels`."""
    entropy = [_encode(seed)] + [_encode(p) for p in labels]
    key = np.random.SeedSequence(entropy).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normal_block(seed: int, labels: tuple, shape) -> np.ndarray:
    """Standard-normal block addressed purely by (seed, labels).

    Row ``i`` of the block is the draw owned by path index ``i``; the whole
    block is produced in one deterministic pass, so consumers may split it
    across workers without changing the result.
    """
    return stream(seed, *labels).standard_normal(shape)
