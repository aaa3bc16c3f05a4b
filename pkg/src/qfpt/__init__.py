"""First-passage statistics of continuously monitored quantum systems.

The package simulates diffusive quantum trajectories of small monitored
systems, detects their decoherence-free subspaces, and evaluates the exact
closed-form first-passage laws of the overlap diffusion between two such
subspaces, together with goodness-of-fit machinery to cross-validate the two
routes against each other.
"""

from .analytic import (
    DiffusionParams,
    FptMoments,
    SpectralSolution,
    averaged_moments,
    density,
    fidelity_time_bound,
    fpt_cdf,
    fpt_density,
    lambda_n,
    mean_fpt,
    mean_fpt_general,
    params_from_partition,
    splitting_upper,
    variance_fpt,
)
from .errors import (
    CensoringError,
    ClosureError,
    DivergenceError,
    ModelError,
    QfptError,
    TruncationError,
)
from .models import ModelSpec, build_qnd2, build_ring5, qnd2_initial, ring5_initial
from .sme import (
    IntegratorConfig,
    OverlapTrace,
    TrajectoryState,
    ensemble_means,
    lindblad_average,
    simulate_ensemble,
    simulate_reduced_ensemble,
    simulate_trajectory,
    step_reduced,
    step_sme,
)
from .stats import (
    EnsembleSummary,
    HittingRecord,
    ecdf,
    histogram,
    ks_one_sample,
    ks_two_sample,
    summarize,
)
from .subspaces import QuantumModel, SubspacePartition, build_partition, find_dfs, overlap

__version__ = "0.1.0"

__all__ = [
    "CensoringError",
    "ClosureError",
    "DiffusionParams",
    "DivergenceError",
    "EnsembleSummary",
    "FptMoments",
    "HittingRecord",
    "IntegratorConfig",
    "ModelError",
    "ModelSpec",
    "OverlapTrace",
    "QfptError",
    "QuantumModel",
    "SpectralSolution",
    "SubspacePartition",
    "TrajectoryState",
    "TruncationError",
    "averaged_moments",
    "build_partition",
    "build_qnd2",
    "build_ring5",
    "density",
    "ecdf",
    "ensemble_means",
    "fidelity_time_bound",
    "find_dfs",
    "fpt_cdf",
    "fpt_density",
    "histogram",
    "ks_one_sample",
    "ks_two_sample",
    "lambda_n",
    "lindblad_average",
    "mean_fpt",
    "mean_fpt_general",
    "overlap",
    "params_from_partition",
    "qnd2_initial",
    "ring5_initial",
    "simulate_ensemble",
    "simulate_reduced_ensemble",
    "simulate_trajectory",
    "splitting_upper",
    "step_reduced",
    "step_sme",
    "summarize",
    "variance_fpt",
]
