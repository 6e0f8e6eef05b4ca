"""Dense linear-algebra helpers and the seeded random stream.

Matrices are plain float64 numpy arrays. Feature matrices put frequency
bins on rows and frames on columns (``l x T``); batched internals transpose
to ``(batch, frames, features)`` so a frame is a row vector that can be
right-multiplied by an ``l x e`` weight matrix.
"""

import numpy as np

DTYPE = np.float64


def as_matrix(a, name="matrix"):
    m = np.asarray(a, dtype=DTYPE)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def hadamard(a, b):
    """Element-wise product of two equally shaped matrices."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def mean_over_columns(m):
    """Per-row arithmetic mean, i.e. the average frame of ``m``."""
    m = np.asarray(m, dtype=DTYPE)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise ValueError(f"cannot average over columns of shape {m.shape}")
    return m.mean(axis=1)


class SeededRng:
    """Deterministic random stream.

    ``stream`` selects an independent substream for the same seed, so that
    initialisation, shuffling and dropout never consume each other's draws.
    """

    def __init__(self, seed=0, stream=0):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(np.random.PCG64([self.seed, self.stream]))

    @property
    def generator(self):
        return self._gen

    def uniform(self, lo, hi, size):
        return self._gen.uniform(lo, hi, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def random(self, size):
        return self._gen.random(size)


def rng_uniform(rng, lo, hi, count):
    if not lo < hi:
        raise ValueError(f"need lo < hi, got lo={lo}, hi={hi}")
    return rng.uniform(lo, hi, int(count))
