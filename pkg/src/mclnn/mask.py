"""Filterbank-like binary masks for masked conditional layers.

A mask is an ``l x e`` 0/1 matrix (features x hidden nodes). Its ones are
laid out along the column-major linear index

    lx = a + (g - 1) * (l + (bw - ov)),   a in [0, bw-1], g in [1, G]

with ``G = ceil(l*e / (l + bw - ov))``. Each band is ``bw`` consecutive
ones down a column; a band that runs past the last row continues at the
top of the next column, which is what produces the shifted copies of the
pattern across column groups when the overlap is negative.
"""

from dataclasses import dataclass
import math

import numpy as np


class MaskSpecError(ValueError):
    pass


@dataclass(frozen=True)
class MaskSpec:
    bandwidth: int
    overlap: int
    feature_len: int
    hidden_len: int

    def __post_init__(self):
        for name in ("bandwidth", "feature_len", "hidden_len"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise MaskSpecError(f"{name} must be a positive integer, got {value}")
        if int(self.overlap) != self.overlap:
            raise MaskSpecError(f"overlap must be an integer, got {self.overlap}")
        if self.bandwidth > self.feature_len:
            raise MaskSpecError(
                f"bandwidth must not exceed feature_len "
                f"(bw={self.bandwidth}, l={self.feature_len})"
            )
        if self.stride < 1:
            raise MaskSpecError(
                f"l + (bw - ov) must be >= 1, got {self.stride} "
                f"(l={self.feature_len}, bw={self.bandwidth}, ov={self.overlap})"
            )

    @property
    def stride(self):
        """Linear-index distance between the starts of successive bands."""
        return self.feature_len + (self.bandwidth - self.overlap)

    @property
    def n_bands(self):
        return math.ceil(self.feature_len * self.hidden_len / self.stride)

    @property
    def shape(self):
        return (self.feature_len, self.hidden_len)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    entries: np.ndarray
    spec: MaskSpec

    @property
    def shape(self):
        return self.entries.shape

    @property
    def n_ones(self):
        return int(self.entries.sum())

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash(self.spec)


def build_mask(spec):
    """Generate the binary mask described by ``spec``.

    Linear indices at or beyond ``l*e`` are dropped rather than wrapped.

    >>> build_mask(MaskSpec(2, 1, 4, 3)).entries.astype(int)
    array([[1, 0, 0],
           [1, 1, 0],
           [0, 1, 1],
           [0, 0, 1]])
    """
    l, e = spec.feature_len, spec.hidden_len
    size = l * e
    offsets = np.arange(spec.bandwidth)
    starts = np.arange(spec.n_bands) * spec.stride
    idx = (starts[:, None] + offsets[None, :]).ravel()
    idx = idx[idx < size]
    flat = np.zeros(size, dtype=np.float64)
    flat[idx] = 1.0
    entries = flat.reshape((l, e), order="F")
    entries.setflags(write=False)
    return BinaryMask(entries, spec)


def mask_ones(mask):
    """Sorted ``(row, col)`` coordinates of every one in ``mask``."""
    entries = mask.entries if isinstance(mask, BinaryMask) else np.asarray(mask)
    rows, cols = np.nonzero(entries)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def format_mask(mask):
    spec = mask.spec
    lines = ["".join("1" if v else "0" for v in row) for row in mask.entries]
    lines.append(
        f"l={spec.feature_len} e={spec.hidden_len} bw={spec.bandwidth} "
        f"ov={spec.overlap} ones={mask.n_ones}"
    )
    return "\n".join(lines)
