"""Named random sub-streams derived from one root seed."""
from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``name`` (e.g. "init", "dropout", "split")."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode()), *map(int, extra)])
