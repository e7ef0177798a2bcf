"""Strata construction: kernel density estimate of the PSF, boundary rules and assignment.

Three boundary rules are provided:

* :func:`root_cum_boundaries` splits the integral of the square-rooted
  density into ``K`` equal parts (cumulative root-frequency rule);
* :func:`quantile_boundaries` uses equally spaced empirical quantiles;
* :func:`class_boundaries` puts every distinct value in its own stratum.

Outer cuts are always infinite so every unit, including those outside the
range of the sample that produced the boundaries, receives a stratum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateSample, TooFewDistinctValues, TooManyClasses

GRID_SIZE = 512
GRID_PAD = 3.0
MAX_CLASSES = 50
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class KdeModel:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def mass(self) -> float:
        """Trapezoidal integral of the density over the grid."""
        return float(np.trapezoid(self.density, self.grid))


@dataclass(frozen=True, eq=False)
class StrataBoundaries:
    """Cut points ``c_0 < c_1 < ... < c_K`` with ``c_0 = -inf`` and ``c_K = +inf``."""

    cuts: np.ndarray

    def __post_init__(self):
        c = np.array(self.cuts, dtype=float).ravel()
        if c.size < 2:
            raise ValueError("need at least two cut points")
        if c[0] != -np.inf or c[-1] != np.inf:
            raise ValueError("outer cuts must be -inf and +inf")
        if not np.all(np.isfinite(c[1:-1])):
            raise ValueError("interior cuts must be finite")
        if not np.all(np.diff(c) > 0):
            raise ValueError(f"cuts must be strictly increasing, got {c}")
        c.setflags(write=False)
        object.__setattr__(self, "cuts", c)

    @classmethod
    def from_interior(cls, interior) -> "StrataBoundaries":
        return cls(np.concatenate([[-np.inf], np.asarray(interior, dtype=float), [np.inf]]))

    @property
    def K(self) -> int:
        return self.cuts.size - 1

    @property
    def interior(self) -> np.ndarray:
        return self.cuts[1:-1]


@dataclass(frozen=True, eq=False)
class StrataAssignment:
    """Stratum label (1..K) per unit plus per-stratum, per-arm counts."""

    labels: np.ndarray
    n: np.ndarray
    n0: np.ndarray
    n1: np.ndarray

    @property
    def K(self) -> int:
        return self.n.size


def silverman_bandwidth(values) -> float:
    """``0.9 * min(sd, IQR / 1.34) * n ** (-1/5)``, falling back to sd when the IQR is zero."""
    v = np.asarray(values, dtype=float)
    sd = float(np.std(v, ddof=1))
    q75, q25 = np.percentile(v, [75, 25])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * v.size ** (-0.2)


def _exact_density(grid: np.ndarray, values: np.ndarray, h: float) -> np.ndarray:
    z = np.subtract.outer(grid, values)
    z *= 1.0 / h
    np.square(z, out=z)
    z *= -0.5
    np.exp(z, out=z)
    return z.sum(axis=1)


def _binned_density(grid: np.ndarray, values: np.ndarray, h: float) -> np.ndarray:
    # linear binning onto the grid, then discrete convolution with the sampled kernel
    g = grid.size
    step = grid[1] - grid[0]
    pos = (values - grid[0]) / step
    left = np.clip(np.floor(pos).astype(np.intp), 0, g - 2)
    frac = pos - left
    counts = np.bincount(left, 1.0 - frac, minlength=g) + np.bincount(left + 1, frac, minlength=g)
    half = min(g - 1, int(math.ceil(8.0 * h / step)))
    offsets = np.arange(-half, half + 1) * (step / h)
    kernel = np.exp(-0.5 * offsets * offsets)
    return np.convolve(counts, kernel, mode="same") if kernel.size <= g else (
        np.convolve(counts, kernel, mode="full")[half : half + g]
    )


def kde_fit(values, grid_size: int = GRID_SIZE, method: str = "exact") -> KdeModel:
    """Gaussian kernel density estimate with Silverman's bandwidth.

    The density is evaluated on ``grid_size`` equally spaced points covering
    ``[min - 3h, max + 3h]`` and rescaled to unit trapezoidal mass on that
    grid. ``method="binned"`` replaces the direct kernel sum with linear
    binning plus convolution (relative error around 1e-4, much faster).
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 2:
        raise DegenerateSample(f"need at least 2 values for a density estimate, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        raise DegenerateSample(f"all {v.size} values equal {lo}; bandwidth would be zero")
    h = silverman_bandwidth(v)
    grid = np.linspace(lo - GRID_PAD * h, hi + GRID_PAD * h, grid_size)
    if method == "exact":
        raw = _exact_density(grid, v, h)
    elif method == "binned":
        raw = _binned_density(grid, v, h)
    else:
        raise ValueError(f"unknown KDE method {method!r}")
    density = np.maximum(raw, 0.0) / (v.size * h * _SQRT_2PI)
    density /= np.trapezoid(density, grid)
    density.setflags(write=False)
    grid.setflags(write=False)
    return KdeModel(grid=grid, density=density, bandwidth=h)


def root_cumulative(kde: KdeModel) -> np.ndarray:
    """Running trapezoidal integral of ``sqrt(density)`` along the grid (starts at 0)."""
    root = np.sqrt(kde.density)
    out = np.empty_like(root)
    out[0] = 0.0
    np.cumsum(0.5 * (root[1:] + root[:-1]) * np.diff(kde.grid), out=out[1:])
    return out


def root_cum_boundaries(kde: KdeModel, K: int) -> StrataBoundaries:
    """Cuts that give every stratum an equal share of the integral of ``sqrt(f)``.

    Each interior cut is placed by linear interpolation of the cumulative
    curve between grid points.
    """
    K = int(K)
    if K < 1:
        raise ValueError(f"number of strata must be >= 1, got {K}")
    if K == 1:
        return StrataBoundaries.from_interior([])
    cum = root_cumulative(kde)
    targets = cum[-1] * np.arange(1, K) / K
    interior = np.interp(targets, cum, kde.grid)
    if not np.all(np.diff(interior) > 0):
        raise DegenerateSample("root-cumulative cuts collapsed; density too concentrated for K strata")
    return StrataBoundaries.from_interior(interior)


def quantile_boundaries(values, K: int) -> StrataBoundaries:
    """Interior cuts at the ``k/K`` empirical quantiles (linear interpolation)."""
    K = int(K)
    if K < 1:
        raise ValueError(f"number of strata must be >= 1, got {K}")
    if K == 1:
        return StrataBoundaries.from_interior([])
    v = np.asarray(values, dtype=float).ravel()
    interior = np.quantile(v, np.arange(1, K) / K)
    if np.unique(v).size < K or not np.all(np.diff(interior) > 0):
        raise TooFewDistinctValues(f"quantile cuts collide for K={K}: {interior}")
    return StrataBoundaries.from_interior(interior)


def class_boundaries(values, max_classes: int = MAX_CLASSES) -> StrataBoundaries:
    """One stratum per distinct value, cuts at the midpoints between neighbours."""
    levels = np.unique(np.asarray(values, dtype=float))
    if levels.size > max_classes:
        raise TooManyClasses(
            f"{levels.size} distinct values exceeds the limit of {max_classes} classes"
        )
    return StrataBoundaries.from_interior(0.5 * (levels[1:] + levels[:-1]))


def assign_labels(boundaries: StrataBoundaries, psf) -> np.ndarray:
    """Label ``k`` (1-based) for every value in ``(c_{k-1}, c_k]``."""
    return np.searchsorted(boundaries.interior, np.asarray(psf, dtype=float), side="left") + 1


def assign(boundaries: StrataBoundaries, psf, w) -> StrataAssignment:
    labels = assign_labels(boundaries, psf)
    w = np.asarray(w)
    K = boundaries.K
    n1 = np.bincount(labels - 1, weights=(w == 1), minlength=K).astype(np.int64)
    n = np.bincount(labels - 1, minlength=K).astype(np.int64)
    return StrataAssignment(labels=labels, n=n, n0=n - n1, n1=n1)
