"""Reproducible counter-based random number streams.

Every stochastic routine in the package draws from a stream derived from a
user seed plus a tuple of labels (typically a purpose string and a path or
replicate index).  Streams are numpy Philox generators keyed by a SHA-256
digest of the seed/label tuple, so

* the same (seed, labels) pair yields the same variates on every platform,
* distinct labels yield statistically independent streams, and
* per-path streams make results independent of how work is sliced across
  workers: path j consumes only its own stream no matter which worker runs it.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numpy.random import Generator, Philox

__all__ = ["stream", "stream_key", "spawn_seed"]


def stream_key(seed: int, *labels) -> str:
    """Stable textual identifier of a stream; stored in PathSample.seed_info."""
    parts = [str(int(seed))] + [str(lab) for lab in labels]
    return "/".join(parts)


def _philox_key(identifier: str) -> np.ndarray:
    digest = hashlib.sha256(identifier.encode("utf8")).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64)


def stream(seed: int, *labels) -> Generator:
    """Return the Generator for the given seed and label tuple."""
    return Generator(Philox(key=_philox_key(stream_key(seed, *labels))))


def spawn_seed(rng: Generator | None = None) -> int:
    """Draw a fresh 64-bit seed (used when the config omits one; echoed back)."""
    if rng is None:
        rng = np.random.default_rng()
    return int(rng.integers(0, 2**63 - 1, dtype=np.int64))
