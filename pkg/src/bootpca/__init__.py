"""Exact bootstrap PCA for tall data matrices (many more rows than subjects).

The p x n data are decomposed once; every bootstrap replicate is then an
SVD of an n-dimensional score matrix, and p-dimensional summaries are
recovered by projecting through the sample PCs.
"""
from .bootstrap import (BootstrapEnsemble, BootstrapOptions, SvdConvergenceError,
                        run_bootstrap)
from .matrixio import TallMatrix, import_csv, read_matrix, write_matrix
from .projection import PercentilePlan, percentile_intervals, stream_percentiles
from .simulation import SimConfig, run_coverage
from .summaries import (cone_threshold, elliptical_cr, eigenvalue_stats, moment_ci,
                        moments_of_A, pc_mean, pc_standard_errors, subspace_threshold,
                        target_variance_explained)
from .svd import DegenerateSampleError, SvdResult, economy_svd

__version__ = "0.1.0"

__all__ = [
    "BootstrapEnsemble", "BootstrapOptions", "DegenerateSampleError", "PercentilePlan",
    "SimConfig", "SvdConvergenceError", "SvdResult", "TallMatrix", "cone_threshold",
    "economy_svd", "eigenvalue_stats", "elliptical_cr", "import_csv", "moment_ci",
    "moments_of_A", "pc_mean", "pc_standard_errors", "percentile_intervals", "read_matrix",
    "run_bootstrap", "run_coverage", "stream_percentiles", "subspace_threshold",
    "target_variance_explained", "write_matrix",
]
