"""
Kernels, uniform grids and the nonlinear (log-domain) smoothing operator.

A univariate density is carried as its values on a uniform grid. The smoothing
operator maps a density ``psi`` to

.. math::
    \\mathcal{N}_h \\psi(x) = \\exp \\int K_h(x - u) \\ln \\psi(u) \\, du,

which is evaluated here by trapezoid quadrature over the grid. The discrete
kernel is symmetrically balanced (Sinkhorn scaling) so that every output point
sees a convex combination of grid values and every grid value spreads unit
mass. The first property reproduces constants exactly; together with Jensen
the second keeps the result a subdensity even next to the grid edges, where a
plain per-row renormalisation would leak mass.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike, NDArray

EPS_FLOOR = 1e-12
LOG_EPS_FLOOR = math.log(EPS_FLOOR)
SQRT_2PI = math.sqrt(2.0 * math.pi)

__all__ = [
    "EPS_FLOOR",
    "KernelSpec",
    "Grid",
    "GridDensity",
    "GridMismatchError",
    "DegenerateDataError",
    "UnderResolvedKernelWarning",
    "kernel_eval",
    "bandwidth_default",
    "smoothing_weights",
    "smooth_log_density",
    "l1_distance",
    "generalized_kl",
    "interpolate_at",
    "trapezoid",
]


class GridMismatchError(ValueError):
    """Two grid densities that must share a grid do not."""


class DegenerateDataError(ValueError):
    """Data with zero or negative spread where a scale is required."""


class UnderResolvedKernelWarning(RuntimeWarning):
    """Bandwidth below half the grid spacing; the kernel is not resolved."""


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and bandwidth ``h``. Only the Gaussian family exists."""

    bandwidth: float
    family: str = "gaussian"

    def __post_init__(self):
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ValueError(f"bandwidth must be positive and finite, got {self.bandwidth!r}")
        if self.family != "gaussian":
            raise ValueError(f"unsupported kernel family {self.family!r}")
        object.__setattr__(self, "bandwidth", float(self.bandwidth))


def kernel_eval(spec: KernelSpec, u: ArrayLike) -> NDArray | float:
    """Rescaled kernel ``K_h(u) = K(u / h) / h`` with ``K`` the standard normal density."""
    h = spec.bandwidth
    z = np.asarray(u, dtype=float) / h
    out = np.exp(-0.5 * z * z) / (SQRT_2PI * h)
    return float(out) if out.ndim == 0 else out


def bandwidth_default(column_sd: float, n: int) -> float:
    """Rule-of-thumb bandwidth ``sd * n**(-1/5)``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not (column_sd > 0 and math.isfinite(column_sd)):
        raise DegenerateDataError(f"standard deviation must be positive, got {column_sd!r}")
    return float(column_sd) * float(n) ** (-0.2)


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``lo + i * (hi - lo) / (m - 1)`` for ``i = 0..m-1``."""

    lo: float
    hi: float
    m: int

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError(f"need finite lo < hi, got [{self.lo}, {self.hi}]")
        if int(self.m) != self.m or self.m < 8:
            raise ValueError(f"need an integer m >= 8, got {self.m}")
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        object.__setattr__(self, "m", int(self.m))

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.m - 1)

    @property
    def points(self) -> NDArray:
        pts = self.lo + np.arange(self.m) * self.spacing
        pts.flags.writeable = False
        return pts

    @property
    def weights(self) -> NDArray:
        """Trapezoid quadrature weights."""
        w = np.full(self.m, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        w.flags.writeable = False
        return w

    @classmethod
    def covering(cls, values: ArrayLike, bandwidth: float, m: int = 512, pad: float = 3.0) -> "Grid":
        """Grid spanning ``[min - pad*h, max + pad*h]`` of ``values``."""
        v = np.asarray(values, dtype=float)
        return cls(float(v.min()) - pad * bandwidth, float(v.max()) + pad * bandwidth, m)


def trapezoid(values: ArrayLike, grid: Grid) -> float:
    return float(np.dot(grid.weights, np.asarray(values, dtype=float)))


@dataclass(frozen=True, eq=False)
class GridDensity:
    """
    Non-negative values on a :class:`Grid`.

    ``kind`` is ``"density"`` (integrates to one) or ``"subdensity"``
    (integrates to at most one); the tolerance on either is 1e-3.
    """

    grid: Grid
    values: NDArray = field(repr=False)
    kind: str = "density"
    check: bool = True

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.m,):
            raise ValueError(f"expected {self.grid.m} values, got shape {vals.shape}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        if self.kind not in ("density", "subdensity"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.check:
            if not np.all(np.isfinite(vals)) or np.any(vals < 0):
                raise ValueError("grid density values must be finite and non-negative")
            mass = self.integral()
            if self.kind == "density" and abs(mass - 1.0) > 1e-3:
                raise ValueError(f"density integrates to {mass:.6g}, not 1")
            if self.kind == "subdensity" and mass > 1.0 + 1e-3:
                raise ValueError(f"subdensity integrates to {mass:.6g} > 1")

    def integral(self) -> float:
        return trapezoid(self.values, self.grid)

    def mean(self) -> float:
        return trapezoid(self.values * self.grid.points, self.grid) / self.integral()

    def __eq__(self, other):
        if not isinstance(other, GridDensity):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.kind == other.kind
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    @classmethod
    def from_function(cls, grid: Grid, fn, normalize: bool = True) -> "GridDensity":
        vals = np.asarray(fn(grid.points), dtype=float)
        if normalize:
            vals = vals / trapezoid(vals, grid)
        return cls(grid, vals)

    @classmethod
    def uniform(cls, grid: Grid) -> "GridDensity":
        return cls(grid, np.full(grid.m, 1.0 / (grid.hi - grid.lo)))


@lru_cache(maxsize=64)
def _log_balance(grid: Grid, spec: KernelSpec) -> NDArray:
    """
    Log of the symmetric scaling ``d`` solving
    ``d_a * sum_b K(u_a - u_b) q_b d_b = 1`` for every grid point ``a``.
    """
    u = grid.points
    q = grid.weights
    z = (u[:, None] - u[None, :]) / spec.bandwidth
    kq = np.exp(-0.5 * z * z) * q[None, :]
    d = 1.0 / np.sqrt(kq.sum(axis=1))
    for _ in range(2_000):
        kd = kq @ d
        if np.max(np.abs(d * kd - 1.0)) < 1e-13:
            break
        d = np.sqrt(d / kd)
    out = np.log(d)
    out.flags.writeable = False
    return out


def smoothing_weights(grid: Grid, spec: KernelSpec, at: ArrayLike,
                      log_cutoff: float | None = None) -> NDArray:
    """
    Row-stochastic matrix ``W`` with ``W[a, b]`` proportional to
    ``q_b * d_b * K_h(at[a] - u_b)``, ``q`` the trapezoid weights, ``u`` the
    grid and ``d`` the balancing scale.

    ``log(N_h psi)(at) = W @ log(psi)``. Rows are built in the log domain so a
    point far from the grid puts its weight on the nearest grid points instead
    of underflowing. With ``log_cutoff`` set, weights below
    ``exp(-log_cutoff)`` times the row maximum are zeroed before the rows are
    normalised.
    """
    at = np.atleast_1d(np.asarray(at, dtype=float))
    h = spec.bandwidth
    z = (at[:, None] - grid.points[None, :]) / h
    logw = (np.log(grid.weights) + _log_balance(grid, spec))[None, :] - 0.5 * z * z
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    if log_cutoff is not None:
        w[logw < -log_cutoff] = 0.0
    w /= w.sum(axis=1, keepdims=True)
    return w


@lru_cache(maxsize=64)
def _grid_smoothing_matrix(grid: Grid, spec: KernelSpec) -> NDArray:
    w = smoothing_weights(grid, spec, grid.points)
    w.flags.writeable = False
    return w


def _check_resolution(grid: Grid, spec: KernelSpec) -> None:
    if spec.bandwidth < 0.5 * grid.spacing:
        warnings.warn(
            f"bandwidth {spec.bandwidth:.3g} is below half the grid spacing "
            f"{grid.spacing:.3g}; the kernel is under-resolved",
            UnderResolvedKernelWarning,
            stacklevel=3,
        )


def log_floor(values: ArrayLike) -> NDArray:
    """``log(max(values, EPS_FLOOR))``."""
    return np.log(np.maximum(np.asarray(values, dtype=float), EPS_FLOOR))


def smooth_log_density(psi: GridDensity, spec: KernelSpec) -> GridDensity:
    """Apply the nonlinear smoothing operator on ``psi``'s own grid."""
    _check_resolution(psi.grid, spec)
    w = _grid_smoothing_matrix(psi.grid, spec)
    out = np.exp(w @ log_floor(psi.values))
    return GridDensity(psi.grid, out, kind="subdensity", check=False)


def _same_grid(a: GridDensity, b: GridDensity) -> None:
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")


def l1_distance(a: GridDensity, b: GridDensity) -> float:
    """Trapezoid integral of ``|a - b|``."""
    _same_grid(a, b)
    return trapezoid(np.abs(a.values - b.values), a.grid)


def generalized_kl(a: GridDensity, b: GridDensity) -> float:
    """
    Generalised Kullback-Leibler divergence ``int a ln(a/b) + b - a``.

    ``b`` is floored at ``EPS_FLOOR``; ``0 ln 0`` is taken as 0.
    """
    _same_grid(a, b)
    av = a.values
    bv = np.maximum(b.values, EPS_FLOOR)
    pos = av > 0
    xlogx = np.zeros_like(av)
    xlogx[pos] = av[pos] * (np.log(av[pos]) - np.log(bv[pos]))
    return trapezoid(xlogx + bv - av, a.grid)


def interpolate_at(gd: GridDensity, x: ArrayLike) -> NDArray | float:
    """Linear interpolation inside the grid, ``EPS_FLOOR`` outside it."""
    out = np.interp(x, gd.grid.points, gd.values, left=EPS_FLOOR, right=EPS_FLOOR)
    return float(out) if np.ndim(out) == 0 else out
