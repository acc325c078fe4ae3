"""Signal algebra on periodic grids.

Signals live on a 1-D or 2-D circular grid and are represented as float64
numpy arrays whose shape equals the grid extents.  Filters are small arrays
of taps indexed by nonnegative offsets.  All convolutions are circular and
follow the convention

    (c * x)_i = sum_s c_s x_{i-s},

so applying the mirrored filter ``c~`` realizes the adjoint (transpose) of
the convolution matrix.  ``circshift`` follows the convention
``circshift(x, s)_i = x_{i-s}`` (``numpy.roll`` with the same shift), which
is the convention pinned by the worked shift examples; see README
"Conventions" for how the derivative formulas depend on it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class Grid:
    """Extents of a periodic sampling grid (rank 1 or 2)."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) not in (1, 2):
            raise DimensionError(f"grid rank must be 1 or 2, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise DimensionError(f"grid extents must be >= 1, got {dims}")

    @property
    def rank(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return int(np.prod(self.dims))


def as_signal(values, grid: Grid) -> np.ndarray:
    """Validate and return ``values`` as a float64 signal on ``grid``."""
    x = np.asarray(values, dtype=np.float64).reshape(grid.dims)
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite values")
    return x


def as_filter(taps) -> np.ndarray:
    """Validate and return filter taps as a float64 array."""
    c = np.asarray(taps, dtype=np.float64)
    if c.ndim not in (1, 2):
        raise DimensionError(f"filter rank must be 1 or 2, got {c.ndim}")
    if c.size == 0:
        raise DimensionError("filter must have at least one tap")
    if not np.all(np.isfinite(c)):
        raise ValueError("filter contains non-finite taps")
    return c


def _check_filter_fits(x: np.ndarray, c: np.ndarray) -> None:
    if c.ndim != x.ndim:
        raise DimensionError(
            f"filter rank {c.ndim} does not match signal rank {x.ndim}"
        )
    if any(rc > rx for rc, rx in zip(c.shape, x.shape)):
        raise DimensionError(
            f"filter extents {c.shape} exceed grid extents {x.shape}"
        )


def circ_conv(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Circular convolution (c * x)_i = sum_s c_s x_{i-s}."""
    _check_filter_fits(x, c)
    axes = tuple(range(x.ndim))
    out = np.zeros_like(x)
    for s in np.ndindex(c.shape):
        out += c[s] * np.roll(x, s, axis=axes)
    return out


def circ_conv_adjoint(u: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Adjoint of ``circ_conv(., c)``: correlation with c, i.e. c~ * u."""
    _check_filter_fits(u, c)
    axes = tuple(range(u.ndim))
    out = np.zeros_like(u)
    for s in np.ndindex(c.shape):
        out += c[s] * np.roll(u, tuple(-k for k in s), axis=axes)
    return out


def circshift(x: np.ndarray, offset) -> np.ndarray:
    """Circular shift with ``circshift(x, s)_i = x_{i-s}``."""
    offset = np.atleast_1d(np.asarray(offset, dtype=int))
    if offset.size != x.ndim:
        raise DimensionError(
            f"offset length {offset.size} does not match grid rank {x.ndim}"
        )
    return np.roll(x, tuple(offset), axis=tuple(range(x.ndim)))


def filter_spectrum(c: np.ndarray, grid: Grid) -> np.ndarray:
    """DFT magnitudes |sum_s c_s exp(-2i*pi*<s,m>/N)| over all grid frequencies.

    Evaluated directly over the filter's taps, O(N * taps).
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != grid.rank:
        raise DimensionError(
            f"filter rank {c.ndim} does not match grid rank {grid.rank}"
        )
    if any(rc > rg for rc, rg in zip(c.shape, grid.dims)):
        raise DimensionError(
            f"filter extents {c.shape} exceed grid extents {grid.dims}"
        )
    freq = np.zeros(grid.dims, dtype=np.complex128)
    axes_freqs = [np.arange(d) for d in grid.dims]
    mesh = np.meshgrid(*axes_freqs, indexing="ij")
    for s in np.ndindex(c.shape):
        phase = sum(sk * mk / dk for sk, mk, dk in zip(s, mesh, grid.dims))
        freq += c[s] * np.exp(-2j * np.pi * phase)
    return np.abs(freq)


def filter_spectrum_max(c: np.ndarray, grid: Grid) -> float:
    """Largest singular value of the circular convolution matrix of ``c``."""
    return float(np.max(filter_spectrum(c, grid)))
