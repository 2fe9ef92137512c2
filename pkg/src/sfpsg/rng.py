"""Named random streams derived from a single 64-bit seed.

Every consumer (game generator, learning run, oracle multi-starts) draws from
its own Philox stream keyed by ``(seed, stream id, *extra)``, so adding draws
in one place never shifts the numbers seen elsewhere.
"""

import numpy as np

STREAMS = {"generator": 0, "run": 1, "oracle": 2}


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must be a non-negative 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name], *extra))
    return np.random.Generator(np.random.Philox(ss))
