"""Per-path random substreams.

The noise of path ``i`` depends only on ``(seed, i)``: each path gets a Philox
generator keyed by a ``SeedSequence`` whose spawn key is the path index. Any
split of the path range into blocks or workers therefore sees identical draws.
"""

import numpy as np


def path_generator(seed: int, path: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(path,))))


def path_normals(seed: int, first: int, count: int, steps: int, dim: int) -> np.ndarray:
    """Standard normals of shape ``(count, steps, dim)`` for paths ``first .. first+count-1``."""
    out = np.empty((count, steps, dim))
    for j in range(count):
        out[j] = path_generator(seed, first + j).standard_normal((steps, dim))
    return out
