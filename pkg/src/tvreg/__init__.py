"""
Estimation, testing and variable selection for linear regression models
whose coefficients vary smoothly in rescaled time.
"""
from tvreg.covariance import CovarianceField, estimate_covariance, select_truncation_lag
from tvreg.dataio import emit_report, ingest_csv
from tvreg.exceptions import (
    CalibrationError,
    CovarianceError,
    DataError,
    DomainError,
    FitError,
    KernelError,
    ReplicationError,
    StabilityError,
    TvregError,
)
from tvreg.kernels import Kernel, KernelConstants, bartlett, epanechnikov, get_kernel, kernel_constants
from tvreg.locfit import (
    EvaluationGrid,
    Hypothesis,
    LocalLinearFit,
    RegressionData,
    local_linear_fit,
    theorem1_ci,
)
from tvreg.processes import (
    simulate_ar_arch,
    simulate_model_i,
    simulate_model_ii,
    simulate_partly_constant,
    simulate_tvar,
)
from tvreg.replication import run_replication
from tvreg.selection import select_bandwidth, select_subset, two_stage_bandwidth
from tvreg.testing import TestReport, delta_statistic, simulated_null_quantile, tv_test

__version__ = "0.1.0"
