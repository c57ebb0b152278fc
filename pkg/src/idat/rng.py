"""Counter-based random streams.

Every random draw in the package goes through :func:`stream`, which keys a
Philox4x64 generator with ``(seed, stream_id << 32 | index)``.  Streams with
different ids never share counter space, so data order, teacher init and
student init cannot interleave regardless of call order.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# Stream ids.  Values are part of the reproducibility contract; never reorder.
PROTOTYPES = 1
NOISE = 2
BATCHES = 3
STUDENT_INIT = 4
TEACHER_INIT = 5
ADAPTER_INIT = 6
HEAD_INIT = 7
SWEEP = 8
TEST = 99


def stream(seed: int, stream_id: int, index: int = 0) -> np.random.Generator:
    """Return an independent generator for ``(seed, stream_id, index)``."""
    if not 0 <= stream_id < (1 << 32) or not 0 <= index < (1 << 32):
        raise ValueError(f"stream id/index out of range: {stream_id}, {index}")
    key = np.array([seed & MASK64, (stream_id << 32) | index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(base_seed: int, run_index: int) -> int:
    """Seed for the ``run_index``-th run of a sweep rooted at ``base_seed``."""
    return int(stream(base_seed, SWEEP, run_index).integers(0, 2**63 - 1))
