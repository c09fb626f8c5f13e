"""Counter-based random substreams.

Each stream is addressed by a tuple of integers (for example ``(stream,
replicate)``) and depends only on the root seed and that address, so work can
be split across threads or reordered without changing any draw.
"""
import numpy as np


def substream(seed: int, *address: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(a) for a in address))
    return np.random.Generator(np.random.Philox(ss))


def bootstrap_indices(seed: int, stream: int, replicate: int, n: int) -> np.ndarray:
    """Resampled case indices for one bootstrap replicate."""
    return substream(seed, stream, replicate).integers(0, n, size=n)
