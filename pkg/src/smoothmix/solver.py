"""
Majorisation-minimisation fitting of the smoothed-likelihood mixture.

One MM step computes the posterior weights at the current parameters, sets the
proportions to their column means and replaces every component density by the
posterior-weighted kernel density estimate of its coordinate. With the
proportions held fixed (profile mode) only the densities move; that map has a
unique fixed point and each step decreases the loss by at least a quarter of
the weighted squared L1 movement of the densities, which
:func:`descent_certificate` checks numerically.
"""

from __future__ import annotations

import functools
import json
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .mixture import (
    DataKernel,
    MixtureModel,
    as_dataset,
    evaluate,
    model_from_dict,
    model_to_dict,
)
from .smoothing import Grid, GridMismatchError, KernelSpec, bandwidth_default

log = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-8
DESCENT_SLACK = 1e-8
TIE_TOL = 1e-12

__all__ = [
    "WEIGHT_FLOOR",
    "Init",
    "FitConfig",
    "FitResult",
    "DescentCertificate",
    "ComponentCollapseError",
    "resolve_bandwidth",
    "make_grids",
    "initialize",
    "proportion_update",
    "density_update",
    "mm_step",
    "profile_step",
    "descent_certificate",
    "finalize",
    "fit",
    "profile_fit",
    "result_to_json",
    "result_from_json",
]


class ComponentCollapseError(RuntimeError):
    """A component's proportion fell to the weight floor."""

    def __init__(self, component: int, weight: float, iteration: int | None = None):
        self.component = component
        self.weight = weight
        self.iteration = iteration
        where = "" if iteration is None else f" at iteration {iteration}"
        super().__init__(f"component {component} collapsed (weight {weight:.3g}){where}")


class Init(str, Enum):
    RANDOM = "random"
    KMEANS = "kmeans"


@dataclass(frozen=True)
class FitConfig:
    K: int = 2
    bandwidth: float | str = "auto"
    grid_points: int = 512
    max_iters: int = 500
    loss_tol: float = 1e-8
    init: Init = Init.KMEANS
    seed: int = 0
    certify_descent: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.loss_tol > 0:
            raise ValueError("loss_tol must be positive")
        if self.bandwidth != "auto" and not float(self.bandwidth) > 0:
            raise ValueError("bandwidth must be 'auto' or a positive number")
        object.__setattr__(self, "init", Init(self.init))


@dataclass(frozen=True)
class DescentCertificate:
    loss_drop: float
    lower_bound: float
    satisfied: bool


@dataclass(frozen=True, eq=False)
class FitResult:
    model: MixtureModel
    loss_trajectory: NDArray
    iterations: int
    converged: bool
    posterior: NDArray = field(repr=False)
    descent_certificates: list[DescentCertificate] | None = None
    degeneracy_count: int = 0

    @property
    def loss(self) -> float:
        return float(self.loss_trajectory[-1])


def resolve_bandwidth(data, config: FitConfig) -> KernelSpec:
    data = as_dataset(data)
    if config.bandwidth == "auto":
        return KernelSpec(bandwidth_default(data.pooled_sd(), data.n))
    return KernelSpec(float(config.bandwidth))


def make_grids(data, kernel: KernelSpec, m: int = 512) -> tuple[Grid, ...]:
    data = as_dataset(data)
    return tuple(Grid.covering(data.rows[:, j], kernel.bandwidth, m) for j in range(data.J))


def proportion_update(posterior: ArrayLike) -> NDArray:
    """Column means of the posterior matrix."""
    return np.asarray(posterior, dtype=float).mean(axis=0)


def density_update(data, posterior: ArrayLike, new_weights: ArrayLike, spec: KernelSpec,
                   grids, design: DataKernel | None = None) -> NDArray:
    """
    Weighted kernel density estimates, shape ``(K, J, m)``.

    Each datum contributes its kernel bump, normalised to unit mass on the
    grid, weighted by its posterior. Dividing by the total posterior mass of
    the component gives exactly unit integral; ``new_weights`` only guards
    against collapsed components.
    """
    new_weights = np.asarray(new_weights, dtype=float)
    for k, w in enumerate(new_weights):
        if not w > WEIGHT_FLOOR:
            raise ComponentCollapseError(k, float(w))
    omega = np.asarray(posterior, dtype=float)
    mass = omega.sum(axis=0)
    for k, w in enumerate(mass):
        if not w > WEIGHT_FLOOR * omega.shape[0]:
            raise ComponentCollapseError(k, float(w) / omega.shape[0])
    if design is None:
        design = DataKernel(data, grids, spec)
    elif design.grids != tuple(grids) or design.kernel != spec:
        raise GridMismatchError("design was built for different grids or bandwidth")
    return design.weighted_kde(omega)


def _hard_kmeans(x: NDArray, K: int, rng: np.random.Generator, iters: int = 100) -> NDArray:
    """Lloyd iterations from K distinct random data points; returns labels."""
    n = x.shape[0]
    centers = x[rng.choice(n, size=K, replace=False)]
    labels = np.full(n, -1)
    for _ in range(iters):
        d2 = ((x[:, None, :] - centers[None]) ** 2).sum(-1)
        new = np.argmin(d2, axis=1)
        for k in range(K):
            if not np.any(new == k):
                far = int(np.argmax(d2[np.arange(n), new]))
                new[far] = k
        if np.array_equal(new, labels):
            break
        labels = new
        centers = np.array([x[labels == k].mean(axis=0) for k in range(K)])
    return labels


def initialize(data, config: FitConfig, design: DataKernel | None = None) -> MixtureModel:
    """
    Starting model from seeded responsibilities followed by one update pass.

    ``Init.RANDOM`` draws every row from a flat Dirichlet; ``Init.KMEANS``
    uses hard labels from Lloyd iterations on standardised coordinates.
    """
    data = as_dataset(data)
    if data.n < config.K:
        raise ValueError(f"need at least K={config.K} observations, got {data.n}")
    if design is None:
        kernel = resolve_bandwidth(data, config)
        design = DataKernel(data, make_grids(data, kernel, config.grid_points), kernel)
    rng = np.random.Generator(np.random.Philox(config.seed))
    K = config.K
    if K == 1:
        omega = np.ones((data.n, 1))
    elif config.init is Init.RANDOM:
        omega = rng.dirichlet(np.ones(K), size=data.n)
    else:
        sd = data.sds
        z = (data.rows - data.rows.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        labels = _hard_kmeans(z, K, rng)
        omega = np.zeros((data.n, K))
        omega[np.arange(data.n), labels] = 1.0
    pi = proportion_update(omega)
    pi = pi / pi.sum()
    values = density_update(data, omega, pi, design.kernel, design.grids, design)
    return MixtureModel(pi, design.grids, values, design.kernel)


def mm_step(model: MixtureModel, data, design: DataKernel | None = None
            ) -> tuple[MixtureModel, NDArray]:
    """One full MM iteration; returns the new model and the posterior used."""
    if design is None:
        design = DataKernel.for_model(model, data)
    omega = evaluate(model, design=design).posterior
    return _full_update(model, omega, design), omega


def _full_update(model: MixtureModel, omega: NDArray, design: DataKernel) -> MixtureModel:
    pi = proportion_update(omega)
    pi = pi / pi.sum()
    values = density_update(design.data, omega, pi, model.kernel, model.grids, design)
    return model.replace(weights=pi, values=values)


def profile_step(model: MixtureModel, data, fixed_pi: ArrayLike,
                 design: DataKernel | None = None) -> MixtureModel:
    """One MM iteration on the densities with the proportions held at ``fixed_pi``."""
    fixed_pi = _check_fixed_pi(fixed_pi, model.K)
    if design is None:
        design = DataKernel.for_model(model, data)
    omega = evaluate(model, design=design, weights=fixed_pi).posterior
    values = density_update(design.data, omega, fixed_pi, model.kernel, model.grids, design)
    return model.replace(weights=fixed_pi, values=values)


def _check_fixed_pi(fixed_pi: ArrayLike, K: int) -> NDArray:
    pi = np.asarray(fixed_pi, dtype=float).reshape(-1)
    if pi.size != K or abs(pi.sum() - 1.0) > 1e-10 or np.any(pi <= WEIGHT_FLOOR):
        raise ValueError(f"fixed proportions must be a strictly positive simplex point of size {K}")
    return pi


def _l1_matrix(a: MixtureModel, b: MixtureModel) -> NDArray:
    """``(K, J)`` trapezoid L1 distances between matching component densities."""
    if a.grids != b.grids or a.values.shape != b.values.shape:
        raise GridMismatchError("models are defined on different grids")
    out = np.empty(a.values.shape[:2])
    for j, g in enumerate(a.grids):
        out[:, j] = np.abs(a.values[:, j, :] - b.values[:, j, :]) @ g.weights
    return out


def _certificate(loss_drop: float, pi: NDArray, l1: NDArray) -> DescentCertificate:
    bound = 0.25 * float(pi @ (l1 ** 2).sum(axis=1))
    return DescentCertificate(loss_drop, bound, bool(loss_drop >= bound - DESCENT_SLACK))


def descent_certificate(before: MixtureModel, after: MixtureModel, data, pi_used: ArrayLike,
                        design: DataKernel | None = None) -> DescentCertificate:
    """
    Compare the loss drop of a profile step with the lower bound
    ``1/4 sum_k pi_k sum_j ||psi_kj - psi'_kj||_1^2``.
    """
    pi = np.asarray(pi_used, dtype=float)
    l1 = _l1_matrix(before, after)
    if design is None:
        design = DataKernel.for_model(before, data)
    drop = evaluate(before, design=design, weights=pi).loss - evaluate(after, design=design, weights=pi).loss
    return _certificate(drop, pi, l1)


def _order_key(model: MixtureModel):
    means = [model.density(k, 0).mean() for k in range(model.K)]

    def cmp(a, b):
        wa, wb = model.weights[a], model.weights[b]
        if abs(wa - wb) > TIE_TOL:
            return -1 if wa < wb else 1
        return (means[a] > means[b]) - (means[a] < means[b])

    return functools.cmp_to_key(cmp)


def finalize(model: MixtureModel) -> tuple[MixtureModel, list[int]]:
    """Reorder components by non-decreasing proportion; ties by first-coordinate mean."""
    order = sorted(range(model.K), key=_order_key(model))
    return model.permute(order), order


def _iterate(model, design, config, fixed_pi=None):
    certs = [] if config.certify_descent else None
    ev = evaluate(model, design=design, weights=fixed_pi)
    losses = [ev.loss]
    degenerate = ev.degenerate
    converged = False
    it = 0
    while it < config.max_iters:
        try:
            if fixed_pi is None:
                new = _full_update(model, ev.posterior, design)
            else:
                values = density_update(design.data, ev.posterior, fixed_pi, model.kernel,
                                        model.grids, design)
                new = model.replace(weights=fixed_pi, values=values)
        except ComponentCollapseError as exc:
            exc.iteration = it + 1
            raise
        it += 1
        new_ev = evaluate(new, design=design, weights=fixed_pi)
        degenerate += new_ev.degenerate
        drop = losses[-1] - new_ev.loss
        if certs is not None:
            certs.append(_certificate(drop, new.weights, _l1_matrix(model, new)))
        losses.append(new_ev.loss)
        model, ev = new, new_ev
        if abs(drop) < config.loss_tol:
            converged = True
            break
    return model, ev, np.array(losses), it, converged, certs, degenerate


def fit(data, config: FitConfig, init: MixtureModel | None = None) -> FitResult:
    """
    Minimise the empirical smoothed loss over proportions and densities.

    Iterates MM steps until the absolute loss decrease drops below
    ``config.loss_tol`` or ``config.max_iters`` steps were taken, then orders
    the components by proportion. With ``certify_descent`` each step records
    a certificate with the new proportions as weights, which bounds the full
    step as well as the profile one.
    """
    data = as_dataset(data)
    if init is None:
        kernel = resolve_bandwidth(data, config)
        design = DataKernel(data, make_grids(data, kernel, config.grid_points), kernel)
        init = initialize(data, config, design)
    else:
        design = DataKernel.for_model(init, data)
    model, ev, losses, it, converged, certs, degenerate = _iterate(init, design, config)
    model, order = finalize(model)
    return FitResult(model, losses, it, converged, ev.posterior[:, order], certs, degenerate)


def align_to_weights(model: MixtureModel, pi: ArrayLike) -> MixtureModel:
    """Permute components so their proportions have the same ranks as ``pi``."""
    perm = np.empty(model.K, dtype=int)
    perm[np.argsort(pi, kind="stable")] = np.argsort(model.weights, kind="stable")
    return model.permute(perm)


def profile_fit(data, fixed_pi: ArrayLike, config: FitConfig,
                init: MixtureModel | None = None) -> FitResult:
    """
    Minimise over the densities only, proportions fixed; components are not reordered.

    Without ``init`` the seeded start is permuted so that its largest cluster
    carries the largest fixed proportion. A start whose labels disagree with
    ``fixed_pi`` can settle on a different fixed point.
    """
    data = as_dataset(data)
    fixed_pi = _check_fixed_pi(fixed_pi, config.K if init is None else init.K)
    if init is None:
        kernel = resolve_bandwidth(data, config)
        design = DataKernel(data, make_grids(data, kernel, config.grid_points), kernel)
        init = align_to_weights(initialize(data, config, design), fixed_pi)
    else:
        design = DataKernel.for_model(init, data)
    init = init.replace(weights=fixed_pi)
    model, ev, losses, it, converged, certs, degenerate = _iterate(init, design, config, fixed_pi)
    return FitResult(model, losses, it, converged, ev.posterior, certs, degenerate)


def result_to_dict(result: FitResult) -> dict:
    doc = {
        "model": model_to_dict(result.model),
        "loss_trajectory": result.loss_trajectory.tolist(),
        "iterations": result.iterations,
        "converged": result.converged,
        "degeneracy_count": result.degeneracy_count,
        "posterior": result.posterior.tolist(),
    }
    if result.descent_certificates is not None:
        doc["descent_certificates"] = [
            {"loss_drop": c.loss_drop, "lower_bound": c.lower_bound, "satisfied": c.satisfied}
            for c in result.descent_certificates
        ]
    return doc


def result_from_dict(doc: dict) -> FitResult:
    certs = doc.get("descent_certificates")
    if certs is not None:
        certs = [DescentCertificate(**c) for c in certs]
    return FitResult(
        model_from_dict(doc["model"]),
        np.array(doc["loss_trajectory"], dtype=float),
        int(doc["iterations"]),
        bool(doc["converged"]),
        np.array(doc["posterior"], dtype=float),
        certs,
        int(doc.get("degeneracy_count", 0)),
    )


def result_to_json(result: FitResult) -> str:
    return json.dumps(result_to_dict(result))


def result_from_json(text: str) -> FitResult:
    return result_from_dict(json.loads(text))
