"""Deterministic random substreams for Monte Carlo work.

Every source of randomness in the simulator is a named substream of one
master seed. Streams are identified by a path of integers and short string
labels, e.g. ``substream(seed, trial, round_idx, client, "quant")``, so any
component can re-create its stream without coordination and results do not
depend on scheduling or thread count. Philox is counter-based: distinct
paths give statistically independent, non-overlapping streams.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream", "path_key"]


def path_key(part) -> int:
    """Map one path component (int or str label) to a spawn-key integer."""
    if isinstance(part, bool):
        raise TypeError("bool is ambiguous in a stream path; use an int")
    if isinstance(part, (int, np.integer)):
        part = int(part)
        if part < 0:
            raise ValueError(f"stream path components must be >= 0, got {part}")
        return part
    if isinstance(part, str):
        # crc32 is stable across platforms and Python versions
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"unsupported stream path component: {part!r}")


def substream(master_seed: int, *path) -> np.random.Generator:
    """Return the generator for one named substream of ``master_seed``."""
    seq = np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=tuple(path_key(p) for p in path)
    )
    return np.random.Generator(np.random.Philox(seq))
