"""
Monte Carlo replication harness for the two-component benchmark.

Every replication draws its sample from its own Philox substream keyed by
``(seed, family, n, index)``, fits with several starts and keeps the lowest
loss, then records ``|pi_1 - 1/3|`` and the squared L1 errors of every
fitted marginal against the truth. Cells aggregate replications in index
order, so a report does not depend on execution order or worker count.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from threadpoolctl import threadpool_limits

from .mixture import MixtureModel
from .smoothing import KernelSpec, l1_distance
from .solver import ComponentCollapseError, FitConfig, fit, make_grids, resolve_bandwidth
from .synthetic import Family, SyntheticSpec, sample, substream, true_marginal

log = logging.getLogger(__name__)

BENCH_SIZES = (200, 400, 800, 1600, 3200)
FAILURE_THRESHOLD = 0.2
WORKERS_ENV = "SMOOTHMIX_WORKERS"

SUMMARY_COLUMNS = [
    "family", "n", "R", "raw_prop_err", "scaled_prop_err", "prop_se",
    "raw_dens_err", "scaled_dens_err", "dens_se", "failures", "seconds",
]
COMPONENT_COLUMNS = ["family", "n", "k", "j", "raw_dens_err", "scaled_dens_err", "dens_se"]


def scaled_error(raw_mean: float, n: int, epsilon: float) -> float:
    """``raw_mean * n**(2/5 - epsilon)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return raw_mean * float(n) ** (0.4 - epsilon)


@dataclass(frozen=True)
class BenchConfig:
    families: tuple[Family, ...] = (Family.GAUSSIAN,)
    sizes: tuple[int, ...] = BENCH_SIZES
    replications: int = 200
    epsilon: float = 0.001
    restarts: int = 3
    seed: int = 0
    d: int = 3
    grid_points: int = 512
    max_iters: int = 500
    loss_tol: float = 1e-8
    init: str = "kmeans"
    workers: int | None = None
    output: str | None = None
    # wall time varies run to run; off by default so CSVs are reproducible
    record_timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(Family.parse(f) if isinstance(f, str) else f
                                                   for f in self.families))
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not 0 < self.epsilon < 0.1:
            raise ValueError("epsilon must lie in (0, 0.1)")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if any(s < 2 for s in self.sizes):
            raise ValueError("sample sizes must be >= 2")

    def resolved_workers(self) -> int:
        if self.workers is not None:
            return max(1, int(self.workers))
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))


@dataclass(frozen=True)
class ReplicationRecord:
    family: Family
    n: int
    index: int
    prop_error: float = math.nan
    density_error: float = math.nan
    density_errors: NDArray | None = field(default=None, repr=False)
    weights: NDArray | None = None
    loss: float = math.nan
    bandwidth: float = math.nan
    failed: bool = False

    @property
    def ok(self) -> bool:
        return not self.failed


def truth_model(spec: SyntheticSpec, grids, kernel: KernelSpec) -> MixtureModel:
    """True parameters on the given grids, each marginal renormalised to unit grid mass."""
    values = np.empty((2, len(grids), grids[0].m))
    for k in range(2):
        for j, g in enumerate(grids):
            gd = true_marginal(spec, k + 1, j, g)
            values[k, j] = gd.values / gd.integral()
    return MixtureModel(np.array(spec.weights), tuple(grids), values, kernel)


def _restart_seed(config: BenchConfig, family: Family, n: int, index: int, restart: int) -> int:
    return int(substream(config.seed, family.code, n, index, 1 + restart).integers(2**63))


def run_replication(family, n: int, index: int, config: BenchConfig,
                    truth_init: bool = False) -> ReplicationRecord:
    """
    One replication: sample, fit (best of ``config.restarts`` starts, or a
    single fit started at the truth), score against the truth.
    """
    family = Family.parse(family) if isinstance(family, str) else family
    spec = SyntheticSpec(family, config.d)
    with threadpool_limits(limits=1):
        ls = sample(spec, n, substream(config.seed, family.code, n, index, 0))
        base = FitConfig(K=2, grid_points=config.grid_points, max_iters=config.max_iters,
                         loss_tol=config.loss_tol, init=config.init)
        kernel = resolve_bandwidth(ls.data, base)
        best = None
        if truth_init:
            starts = [truth_model(spec, make_grids(ls.data, kernel, config.grid_points), kernel)]
        else:
            starts = [None] * config.restarts
        for r, start in enumerate(starts):
            cfg = FitConfig(**{**base.__dict__, "seed": _restart_seed(config, family, n, index, r)})
            try:
                res = fit(ls.data, cfg, init=start)
            except ComponentCollapseError as exc:
                log.info("%s n=%d rep=%d start=%d: %s", family.value, n, index, r, exc)
                continue
            if best is None or res.loss < best.loss:
                best = res
    if best is None:
        return ReplicationRecord(family, n, index, bandwidth=kernel.bandwidth, failed=True)
    model = best.model
    errs = np.empty((2, spec.d))
    for k in range(2):
        for j, g in enumerate(model.grids):
            errs[k, j] = l1_distance(model.density(k, j), true_marginal(spec, k + 1, j, g)) ** 2
    return ReplicationRecord(
        family, n, index,
        prop_error=abs(float(model.weights[0]) - spec.weights[0]),
        density_error=float(errs.sum()),
        density_errors=errs,
        weights=model.weights.copy(),
        loss=best.loss,
        bandwidth=kernel.bandwidth,
    )


def _run_one(args):
    return run_replication(*args)


@dataclass(frozen=True)
class BenchCell:
    family: Family
    n: int
    R: int
    epsilon: float
    raw_prop_err: float
    prop_se: float
    raw_dens_err: float
    dens_se: float
    raw_dens_err_kj: NDArray = field(repr=False)
    dens_se_kj: NDArray = field(repr=False)
    failures: int
    seconds: float

    @property
    def scaled_prop_err(self) -> float:
        return scaled_error(self.raw_prop_err, self.n, self.epsilon)

    @property
    def scaled_dens_err(self) -> float:
        return scaled_error(self.raw_dens_err, self.n, self.epsilon)

    @property
    def scaled_dens_err_kj(self) -> NDArray:
        return self.raw_dens_err_kj * float(self.n) ** (0.4 - self.epsilon)

    @property
    def scaled_dens_err_cellmean(self) -> float:
        """Squared L1 error averaged over components and marginals, scaled."""
        return float(self.scaled_dens_err_kj.mean())

    @property
    def flagged(self) -> bool:
        return self.failures > FAILURE_THRESHOLD * self.R


def _mean_se(x: NDArray) -> tuple[float, float]:
    if x.size == 0:
        return math.nan, math.nan
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
    return float(x.mean()), se


def aggregate(records: list[ReplicationRecord], R: int, epsilon: float, seconds: float) -> BenchCell:
    ok = sorted((r for r in records if r.ok), key=lambda r: r.index)
    prop = np.array([r.prop_error for r in ok])
    dens = np.array([r.density_error for r in ok])
    kj = np.array([r.density_errors for r in ok]) if ok else np.full((0, 2, 1), np.nan)
    pm, pse = _mean_se(prop)
    dm, dse = _mean_se(dens)
    kj_mean = kj.mean(axis=0) if ok else np.full(kj.shape[1:], np.nan)
    kj_se = kj.std(axis=0, ddof=1) / math.sqrt(len(ok)) if len(ok) > 1 else np.full(kj.shape[1:], np.nan)
    first = records[0]
    return BenchCell(first.family, first.n, R, epsilon, pm, pse, dm, dse, kj_mean, kj_se,
                     len(records) - len(ok), seconds)


@dataclass(frozen=True)
class BenchReport:
    config: BenchConfig
    cells: tuple[BenchCell, ...]

    def cell(self, family, n: int) -> BenchCell:
        family = Family.parse(family) if isinstance(family, str) else family
        for c in self.cells:
            if c.family is family and c.n == n:
                return c
        raise KeyError((family, n))

    @property
    def flagged_cells(self) -> list[BenchCell]:
        return [c for c in self.cells if c.flagged]

    def trend_inversions(self, family, metric: str = "raw_prop_err") -> int:
        """Number of adjacent sizes where the raw mean error fails to decrease."""
        vals = [getattr(self.cell(family, n), metric) for n in sorted(self.config.sizes)]
        return sum(1 for a, b in zip(vals, vals[1:]) if not b < a)

    def summary_rows(self) -> list[dict]:
        return [
            {
                "family": c.family.value, "n": c.n, "R": c.R,
                "raw_prop_err": c.raw_prop_err, "scaled_prop_err": c.scaled_prop_err,
                "prop_se": c.prop_se, "raw_dens_err": c.raw_dens_err,
                "scaled_dens_err": c.scaled_dens_err, "dens_se": c.dens_se,
                "failures": c.failures,
                "seconds": round(c.seconds, 3) if self.config.record_timing else "",
            }
            for c in self.cells
        ]

    def component_rows(self) -> list[dict]:
        rows = []
        for c in self.cells:
            K, J = c.raw_dens_err_kj.shape
            for k in range(K):
                for j in range(J):
                    rows.append({
                        "family": c.family.value, "n": c.n, "k": k + 1, "j": j + 1,
                        "raw_dens_err": float(c.raw_dens_err_kj[k, j]),
                        "scaled_dens_err": float(c.scaled_dens_err_kj[k, j]),
                        "dens_se": float(c.dens_se_kj[k, j]),
                    })
            rows.append({
                "family": c.family.value, "n": c.n, "k": "mean", "j": "mean",
                "raw_dens_err": float(c.raw_dens_err_kj.mean()),
                "scaled_dens_err": c.scaled_dens_err_cellmean,
                "dens_se": c.dens_se / (K * J),
            })
        return rows

    def format_table(self, metric: str = "scaled_prop_err", digits: int = 2) -> str:
        sizes = sorted(self.config.sizes)
        head = f"{'':<12}" + "".join(f"{n:>8d}" for n in sizes)
        lines = [head]
        for fam in self.config.families:
            vals = []
            for n in sizes:
                v = getattr(self.cell(fam, n), metric)
                vals.append(f"{v:>8.{digits}f}")
            lines.append(f"{fam.value:<12}" + "".join(vals))
        return "\n".join(lines)


def component_path(path: str) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}_components{ext or '.csv'}"


def write_report(report: BenchReport, path: str) -> tuple[str, str]:
    """Write the summary CSV at ``path`` and the per-(k, j) CSV next to it."""
    comp = component_path(path)
    for target, columns, rows in ((path, SUMMARY_COLUMNS, report.summary_rows()),
                                  (comp, COMPONENT_COLUMNS, report.component_rows())):
        with open(target, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path, comp


def run_bench(config: BenchConfig, progress=None) -> BenchReport:
    """Run every (family, n) cell; writes CSVs when ``config.output`` is set."""
    workers = config.resolved_workers()
    cells = []
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for fam in config.families:
            for n in config.sizes:
                t0 = time.perf_counter()
                jobs = [(fam, n, i, config) for i in range(config.replications)]
                if pool is None:
                    records = [_run_one(j) for j in jobs]
                else:
                    records = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
                cell = aggregate(records, config.replications, config.epsilon, time.perf_counter() - t0)
                cells.append(cell)
                log.info("%s n=%d scaled prop %.3f dens %.3f (%.1fs)", fam.value, n,
                         cell.scaled_prop_err, cell.scaled_dens_err, cell.seconds)
                if progress is not None:
                    progress(cell)
    finally:
        if pool is not None:
            pool.shutdown()
    report = BenchReport(config, tuple(cells))
    if config.output:
        write_report(report, config.output)
    return report
