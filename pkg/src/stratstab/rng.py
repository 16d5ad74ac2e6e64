"""Counter-based Brownian increments.

Every increment is addressed by ``(seed, path, step, channel)``: the Philox
key is built from ``(seed, path)`` and the counter from the block of
``BLOCK`` steps containing ``step``.  Any slice of any path can therefore
be regenerated without replaying the others, which keeps ensembles
reproducible regardless of how paths are batched.
"""

from __future__ import annotations

import numpy as np

BLOCK = 1024
_MASK64 = (1 << 64) - 1


def _block_normals(seed, path, block, channels):
    key = ((int(seed) & _MASK64) << 64) | (int(path) & _MASK64)
    counter = np.array([0, block, 0, 0], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
    return gen.standard_normal((BLOCK, channels))


class BrownianSource:
    """Standard-normal increments of ``channels`` Brownian motions on a grid of step ``dt``."""

    def __init__(self, seed: int, channels: int, dt: float):
        if not dt > 0:
            raise ValueError("dt must be positive")
        if seed < 0 or seed > _MASK64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        self.seed = int(seed)
        self.channels = int(channels)
        self.dt = float(dt)

    def normals(self, path: int, start: int, count: int) -> np.ndarray:
        """Unit normals for steps ``start .. start+count-1``; shape ``(count, channels)``."""
        out = np.empty((count, self.channels))
        if self.channels == 0 or count == 0:
            return out
        pos = 0
        step = start
        while pos < count:
            block, off = divmod(step, BLOCK)
            take = min(BLOCK - off, count - pos)
            out[pos:pos + take] = _block_normals(self.seed, path, block, self.channels)[off:off + take]
            pos += take
            step += take
        return out

    def increments(self, paths, start: int, count: int, ratio: int = 1) -> np.ndarray:
        """Increments over ``count`` coarse steps of length ``ratio * dt``.

        Coarse increments are sums of the underlying fine ones, so runs at
        different step sizes see the same Brownian path.  Shape
        ``(count, len(paths), channels)``.
        """
        fine = np.stack([self.normals(p, start * ratio, count * ratio) for p in paths], axis=1)
        fine *= np.sqrt(self.dt)
        if ratio == 1:
            return fine
        return fine.reshape(count, ratio, len(paths), self.channels).sum(axis=1)
