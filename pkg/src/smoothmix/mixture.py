"""
Mixtures of products of univariate grid densities, evaluated through the
nonlinear smoothing operator.

The smoothed mixture is

.. math::
    f_h(x) = \\sum_k \\pi_k \\prod_j \\mathcal{N}_h \\psi_{k,j}(x_j),

and the empirical loss is ``-mean(log f_h(X_i))``. The unknown log true
density that would make this a Kullback-Leibler type loss is dropped; it is
constant in the parameters so loss differences are unaffected.

All evaluation at data points goes through :class:`DataKernel`, which holds
one row-stochastic matrix per coordinate mapping grid values to data points.
The same matrices give the weighted kernel density update in the solver, which
is what makes each MM step an exact majorise-minimise step on the grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp

from .smoothing import (
    EPS_FLOOR,
    LOG_EPS_FLOOR,
    Grid,
    GridDensity,
    GridMismatchError,
    KernelSpec,
    log_floor,
    smoothing_weights,
)

__all__ = [
    "Dataset",
    "MixtureModel",
    "DataKernel",
    "Evaluation",
    "evaluate",
    "smoothed_component_at",
    "smoothed_mixture_at",
    "posterior_weights",
    "empirical_smoothed_loss",
    "naive_score",
    "model_to_dict",
    "model_from_dict",
    "model_to_json",
    "model_from_json",
]


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ``n x J`` array of finite observations."""

    rows: NDArray = field(repr=False)

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim == 1:
            rows = rows[:, None]
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
            raise ValueError(f"data must be a non-empty n x J array, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise ValueError("data contains non-finite entries")
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def J(self) -> int:
        return self.rows.shape[1]

    @property
    def mins(self) -> NDArray:
        return self.rows.min(axis=0)

    @property
    def maxs(self) -> NDArray:
        return self.rows.max(axis=0)

    @property
    def sds(self) -> NDArray:
        return self.rows.std(axis=0, ddof=1) if self.n > 1 else np.zeros(self.J)

    def pooled_sd(self) -> float:
        return float(self.rows.ravel().std(ddof=1)) if self.rows.size > 1 else 0.0


def as_dataset(data) -> Dataset:
    return data if isinstance(data, Dataset) else Dataset(data)


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """
    Proportions ``weights`` (K,) and component densities ``values`` (K, J, m)
    on one grid per coordinate, smoothed with ``kernel``.
    """

    weights: NDArray
    grids: tuple[Grid, ...]
    values: NDArray = field(repr=False)
    kernel: KernelSpec

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        vals = np.array(self.values, dtype=float)
        grids = tuple(self.grids)
        if vals.ndim != 3 or vals.shape[0] != w.size or vals.shape[1] != len(grids):
            raise ValueError(
                f"values shape {vals.shape} inconsistent with K={w.size}, J={len(grids)}"
            )
        if len({g.m for g in grids}) != 1 or vals.shape[2] != grids[0].m:
            raise ValueError("all grids must have the same number of points as values")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError(f"weights must lie on the simplex, got {w}")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("density values must be finite and non-negative")
        w.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "grids", grids)

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def J(self) -> int:
        return len(self.grids)

    def density(self, k: int, j: int) -> GridDensity:
        return GridDensity(self.grids[j], self.values[k, j], check=False)

    @property
    def densities(self) -> list[list[GridDensity]]:
        return [[self.density(k, j) for j in range(self.J)] for k in range(self.K)]

    def replace(self, weights=None, values=None) -> "MixtureModel":
        return MixtureModel(
            self.weights if weights is None else weights,
            self.grids,
            self.values if values is None else values,
            self.kernel,
        )

    def permute(self, order: Sequence[int]) -> "MixtureModel":
        order = list(order)
        return self.replace(self.weights[order], self.values[order])

    def is_ordered(self) -> bool:
        return bool(np.all(np.diff(self.weights) >= 0))

    def __eq__(self, other):
        if not isinstance(other, MixtureModel):
            return NotImplemented
        return (
            self.kernel == other.kernel
            and self.grids == other.grids
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


class _BandedRows:
    """
    Row-stochastic ``n x m`` matrix stored as dense blocks of rows sorted by
    their data value, each block restricted to the grid columns where it has
    non-zero weight. Products use one small BLAS call per block in a fixed
    order, so results are deterministic.
    """

    BLOCK = 128

    def __init__(self, weights: NDArray, x: NDArray):
        order = np.argsort(x, kind="stable")
        self.n, self.m = weights.shape
        self.blocks = []
        for start in range(0, self.n, self.BLOCK):
            rows = order[start:start + self.BLOCK]
            sub = weights[rows]
            cols = np.flatnonzero(sub.any(axis=0))
            c0, c1 = int(cols[0]), int(cols[-1]) + 1
            self.blocks.append((rows, c0, c1, np.ascontiguousarray(sub[:, c0:c1])))

    def __matmul__(self, other: NDArray) -> NDArray:
        out = np.empty((self.n,) + other.shape[1:])
        for rows, c0, c1, blk in self.blocks:
            out[rows] = blk @ other[c0:c1]
        return out

    def rmatmul_t(self, omega: NDArray) -> NDArray:
        """``omega.T @ W`` as a ``(K, m)`` array."""
        out = np.zeros((omega.shape[1], self.m))
        for rows, c0, c1, blk in self.blocks:
            out[:, c0:c1] += omega[rows].T @ blk
        return out

    def toarray(self) -> NDArray:
        out = np.zeros((self.n, self.m))
        for rows, c0, c1, blk in self.blocks:
            out[rows, c0:c1] = blk
        return out


class DataKernel:
    """
    Per-coordinate smoothing matrices from grid values to data points.

    ``mats[j]`` is an ``n x m`` row-stochastic matrix, so
    ``log N_h psi_{k,j}(X_{i,j}) = mats[j][i] @ log psi_{k,j}``. Kernel
    weights below ``exp(-LOG_CUTOFF)`` of a row's largest are dropped; the
    same truncated matrix drives the density update, so the MM step is exact
    for the truncated operator.
    """

    LOG_CUTOFF = 40.0

    def __init__(self, data, grids: Sequence[Grid], kernel: KernelSpec):
        data = as_dataset(data)
        if data.J != len(grids):
            raise ValueError(f"data has {data.J} columns but model has {len(grids)} grids")
        self.data = data
        self.grids = tuple(grids)
        self.kernel = kernel
        self.mats = [
            _BandedRows(smoothing_weights(g, kernel, data.rows[:, j], self.LOG_CUTOFF), data.rows[:, j])
            for j, g in enumerate(self.grids)
        ]
        self._inv_q = [1.0 / g.weights for g in self.grids]

    @classmethod
    def for_model(cls, model: MixtureModel, data) -> "DataKernel":
        return cls(data, model.grids, model.kernel)

    def matches(self, model: MixtureModel) -> bool:
        return self.grids == model.grids and self.kernel == model.kernel

    def log_components(self, values: NDArray) -> NDArray:
        """``(n, K)`` array of ``log N_h psi_k(X_i)``."""
        out = np.zeros((self.data.n, values.shape[0]))
        for j, mat in enumerate(self.mats):
            out += mat @ log_floor(values[:, j, :]).T
        return out

    def weighted_kde(self, omega: NDArray) -> NDArray:
        """
        ``(K, J, m)`` kernel density estimates weighted by the columns of
        ``omega``, each integrating to one under the trapezoid rule.
        """
        mass = omega.sum(axis=0)
        out = np.empty((omega.shape[1], len(self.mats), self.grids[0].m))
        for j, mat in enumerate(self.mats):
            out[:, j, :] = mat.rmatmul_t(omega) * self._inv_q[j][None, :] / mass[:, None]
        return out


def _kernel_for(model: MixtureModel, data, design: DataKernel | None) -> DataKernel:
    if design is None:
        return DataKernel.for_model(model, data)
    if not design.matches(model):
        raise GridMismatchError("design was built for different grids or bandwidth")
    return design


@dataclass(frozen=True)
class Evaluation:
    """Loss, log mixture values and posterior weights at one parameter value."""

    loss: float
    log_mixture: NDArray
    posterior: NDArray
    log_components: NDArray
    degenerate: int


def evaluate(model: MixtureModel, data=None, design: DataKernel | None = None,
             weights: ArrayLike | None = None) -> Evaluation:
    """
    Single pass computing the smoothed loss and posterior weights.

    ``weights`` overrides the model proportions (profile evaluation).
    Rows whose mixture value falls below ``EPS_FLOOR`` are floored and get a
    uniform posterior row; their count is reported as ``degenerate``.
    """
    design = _kernel_for(model, data, design)
    pi = model.weights if weights is None else np.asarray(weights, dtype=float)
    logn = design.log_components(model.values)
    with np.errstate(divide="ignore"):
        lognum = logn + np.log(pi)[None, :]
    logf = logsumexp(lognum, axis=1)
    bad = ~(logf >= LOG_EPS_FLOOR)
    with np.errstate(invalid="ignore"):
        omega = np.exp(lognum - logf[:, None])
    omega /= omega.sum(axis=1, keepdims=True)
    if np.any(bad):
        omega[bad] = 1.0 / pi.size
        logf = np.where(bad, LOG_EPS_FLOOR, logf)
    loss = -float(np.mean(logf))
    return Evaluation(loss, logf, omega, logn, int(bad.sum()))


def _rows(x: ArrayLike, J: int) -> NDArray:
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        x = x.reshape(-1, J)
    return x


def _log_component_at(model: MixtureModel, x: NDArray) -> NDArray:
    """``(N, K)`` log smoothed components at arbitrary points; outside a grid
    the coordinate factor is ``EPS_FLOOR``."""
    out = np.zeros((x.shape[0], model.K))
    for j, g in enumerate(model.grids):
        xj = x[:, j]
        inside = (xj >= g.lo) & (xj <= g.hi)
        col = np.full((x.shape[0], model.K), LOG_EPS_FLOOR)
        if np.any(inside):
            w = smoothing_weights(g, model.kernel, xj[inside])
            col[inside] = w @ log_floor(model.values[:, j, :]).T
        out += col
    return out


def smoothed_component_at(model: MixtureModel, k: int, x: ArrayLike) -> NDArray | float:
    """``prod_j N_h psi_{k,j}(x_j)`` at one J-vector or at each row of an array."""
    arr = _rows(x, model.J)
    out = np.exp(_log_component_at(model, arr)[:, k])
    return float(out[0]) if np.ndim(x) <= 1 else out


def smoothed_mixture_at(model: MixtureModel, x: ArrayLike) -> NDArray | float:
    """``sum_k pi_k N_h psi_k(x)``, floored at ``EPS_FLOOR``."""
    arr = _rows(x, model.J)
    out = np.maximum(np.exp(_log_component_at(model, arr)) @ model.weights, EPS_FLOOR)
    return float(out[0]) if np.ndim(x) <= 1 else out


def posterior_weights(model: MixtureModel, data, design: DataKernel | None = None) -> NDArray:
    """``n x K`` smoothed classification probabilities."""
    return evaluate(model, data, design).posterior


def empirical_smoothed_loss(model: MixtureModel, data, design: DataKernel | None = None) -> float:
    """Mean negative smoothed log-likelihood (nats)."""
    return evaluate(model, data, design).loss


def naive_score(model: MixtureModel, data, design: DataKernel | None = None) -> NDArray:
    """
    Empirical mean of ``(N_h psi_k - N_h psi_K) / f_h`` for ``k < K``: the
    derivative of the mean smoothed log-likelihood along ``pi_k`` with
    ``pi_K = 1 - sum of the others``.
    """
    if model.K < 2:
        raise ValueError("the score in the proportions needs at least two components")
    ev = evaluate(model, data, design)
    ratio = np.exp(ev.log_components - ev.log_mixture[:, None])
    return (ratio[:, :-1] - ratio[:, -1:]).mean(axis=0)


def model_to_dict(model: MixtureModel) -> dict:
    return {
        "K": model.K,
        "J": model.J,
        "weights": model.weights.tolist(),
        "bandwidth": model.kernel.bandwidth,
        "kernel": model.kernel.family,
        "grids": [{"lo": g.lo, "hi": g.hi, "m": g.m} for g in model.grids],
        "densities": model.values.tolist(),
    }


def model_from_dict(doc: dict) -> MixtureModel:
    grids = tuple(Grid(g["lo"], g["hi"], g["m"]) for g in doc["grids"])
    model = MixtureModel(
        np.array(doc["weights"], dtype=float),
        grids,
        np.array(doc["densities"], dtype=float),
        KernelSpec(doc["bandwidth"], doc.get("kernel", "gaussian")),
    )
    if model.K != doc["K"] or model.J != doc["J"]:
        raise ValueError("K/J fields disagree with the stored arrays")
    return model


def model_to_json(model: MixtureModel) -> str:
    # float repr is the shortest string that round-trips bit-exactly
    return json.dumps(model_to_dict(model))


def model_from_json(text: str) -> MixtureModel:
    return model_from_dict(json.loads(text))
