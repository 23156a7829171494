"""Reproducible random streams.

The generator is Philox4x64-10 (counter-based, via numpy's bit generator)
keyed by the 64-bit seed.  Only the raw 64-bit output is consumed; the
conversion to floats is done here so the value stream does not depend on
numpy's distribution code, which is not covered by its stability policy:

* uniform: ``(raw >> 11) * 2**-53`` in [0, 1)
* normal: Box-Muller on consecutive uniform pairs
* truncated normal: normals outside ``±bound`` are redrawn from the stream
"""

from __future__ import annotations

import numpy as np

_TWO_NEG_53 = 2.0 ** -53


class Rng:
    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._bits = np.random.Philox(key=self.seed)

    @property
    def state(self):
        return self._bits.state

    def raw(self, n: int) -> np.ndarray:
        return self._bits.random_raw(int(n)).astype(np.uint64)

    def uniform(self, shape, low=0.0, high=1.0) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53
        return (low + (high - low) * u).reshape(shape)

    def normal(self, shape, std=1.0) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u = self.uniform((2, m))
        # 1 - u keeps the log argument in (0, 1]
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        theta = 2.0 * np.pi * u[1]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return (std * z).reshape(shape)

    def trunc_normal(self, shape, std=1.0, bound=2.0) -> np.ndarray:
        """Normal(0, std) restricted to ``[-bound*std, bound*std]``."""
        z = self.normal(shape).ravel()
        bad = np.flatnonzero(np.abs(z) > bound)
        while bad.size:
            z[bad] = self.normal(bad.size)
            bad = bad[np.abs(z[bad]) > bound]
        return (std * z).reshape(shape)

    def integers(self, low, high, shape) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        span = np.uint64(high - low)
        # modulo bias is < span / 2**64, negligible for the spans used here
        return (low + (self.raw(n) % span).astype(np.int64)).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        keys = self.uniform((n,))
        return np.argsort(keys, kind="stable")
