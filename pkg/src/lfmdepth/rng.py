"""Named, counter-based random streams.

All randomness derives from one 64-bit seed.  A stream is identified by a
name (``"data"``, ``"init"``, ``"timesteps"``, ``"noise"``, ``"ensemble"``)
plus optional integer counters such as the training step, so any draw can be
regenerated without replaying earlier ones.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str, *counters: int) -> np.random.Generator:
    key = (zlib.crc32(name.encode("utf-8")),) + tuple(int(c) for c in counters)
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
