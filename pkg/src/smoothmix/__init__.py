"""Smoothed-likelihood estimation for semi-parametric mixtures of product densities."""

__version__ = "0.1.0"

from .smoothing import (
    EPS_FLOOR,
    DegenerateDataError,
    Grid,
    GridDensity,
    GridMismatchError,
    KernelSpec,
    UnderResolvedKernelWarning,
    bandwidth_default,
    generalized_kl,
    interpolate_at,
    kernel_eval,
    l1_distance,
    smooth_log_density,
)
from .mixture import (
    DataKernel,
    Dataset,
    MixtureModel,
    empirical_smoothed_loss,
    naive_score,
    posterior_weights,
    smoothed_component_at,
    smoothed_mixture_at,
)
from .solver import (
    ComponentCollapseError,
    DescentCertificate,
    FitConfig,
    FitResult,
    Init,
    density_update,
    descent_certificate,
    fit,
    initialize,
    mm_step,
    profile_fit,
    profile_step,
    proportion_update,
)
from .synthetic import Family, LabeledSample, SyntheticSpec, sample, true_marginal
from .bench import BenchConfig, BenchReport, run_bench, run_replication, scaled_error
