"""
Benchmark mixtures: two product components with identical marginals up to a
location shift of ``-1/sqrt(d)`` (component 1, weight 1/3) and ``+1/sqrt(d)``
(component 2, weight 2/3). The base law is standard normal, Student-t with 3
degrees of freedom, or standard Laplace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .mixture import Dataset
from .smoothing import Grid, GridDensity

__all__ = [
    "Family",
    "SyntheticSpec",
    "LabeledSample",
    "substream",
    "sample",
    "true_marginal",
    "base_pdf",
    "base_cdf",
]

WEIGHTS = (1.0 / 3.0, 2.0 / 3.0)
_T3_CONST = 2.0 / (math.pi * math.sqrt(3.0))


class Family(str, Enum):
    GAUSSIAN = "gaussian"
    STUDENT_T3 = "student_t3"
    LAPLACE = "laplace"

    @classmethod
    def parse(cls, name: str) -> "Family":
        key = name.strip().lower().replace("-", "_")
        aliases = {"normal": "gaussian", "student": "student_t3", "t3": "student_t3",
                   "studentt3": "student_t3"}
        return cls(aliases.get(key, key))

    @property
    def code(self) -> int:
        return list(Family).index(self)


@dataclass(frozen=True)
class SyntheticSpec:
    family: Family = Family.GAUSSIAN
    d: int = 3

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family) if isinstance(self.family, str) else self.family)
        if self.d < 1:
            raise ValueError("d must be >= 1")

    @property
    def weights(self) -> tuple[float, float]:
        return WEIGHTS

    def shift(self, component: int) -> float:
        """Location of component 1 or 2."""
        if component not in (1, 2):
            raise ValueError("component must be 1 or 2")
        return (-1.0) ** component / math.sqrt(self.d)


@dataclass(frozen=True, eq=False)
class LabeledSample:
    data: Dataset
    labels: NDArray


def substream(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for the stream ``(seed, *key)``; streams are independent of draw order."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _draw_base(family: Family, rng: np.random.Generator, size) -> NDArray:
    if family is Family.GAUSSIAN:
        return rng.standard_normal(size)
    if family is Family.STUDENT_T3:
        z = rng.standard_normal(size)
        chi2 = (rng.standard_normal((3,) + tuple(np.atleast_1d(size))) ** 2).sum(axis=0)
        return z / np.sqrt(chi2 / 3.0)
    return rng.laplace(0.0, 1.0, size)


def sample(spec: SyntheticSpec, n: int, seed: int | np.random.Generator) -> LabeledSample:
    """Draw ``n`` labelled rows; ``seed`` may be an int or a ready generator."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed)
    labels = np.where(rng.random(n) < WEIGHTS[0], 1, 2)
    shifts = np.where(labels == 1, spec.shift(1), spec.shift(2))
    x = _draw_base(spec.family, rng, (n, spec.d)) + shifts[:, None]
    return LabeledSample(Dataset(x), labels)


def base_pdf(family: Family, x: ArrayLike) -> NDArray:
    x = np.asarray(x, dtype=float)
    if family is Family.GAUSSIAN:
        return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    if family is Family.STUDENT_T3:
        return _T3_CONST * (1.0 + x * x / 3.0) ** -2
    return 0.5 * np.exp(-np.abs(x))


def base_cdf(family: Family, x: ArrayLike) -> NDArray:
    x = np.asarray(x, dtype=float)
    if family is Family.GAUSSIAN:
        from scipy.special import ndtr
        return ndtr(x)
    if family is Family.STUDENT_T3:
        # closed form for three degrees of freedom
        t = x / math.sqrt(3.0)
        return 0.5 + (np.arctan(t) + t / (1.0 + t * t)) / math.pi
    return np.where(x < 0, 0.5 * np.exp(np.minimum(x, 0)), 1.0 - 0.5 * np.exp(-np.maximum(x, 0)))


def true_marginal(spec: SyntheticSpec, component: int, j: int, grid: Grid) -> GridDensity:
    """Exact marginal density of coordinate ``j`` in ``component`` (1 or 2) on ``grid``.

    Marginals are identical across coordinates; ``j`` is only range-checked.
    Values are not renormalised, so the grid integral reflects truncation.
    """
    if not 0 <= j < spec.d:
        raise ValueError(f"coordinate {j} out of range for d={spec.d}")
    vals = base_pdf(spec.family, grid.points - spec.shift(component))
    return GridDensity(grid, vals, check=False)
