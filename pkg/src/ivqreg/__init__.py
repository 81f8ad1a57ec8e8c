"""Instrumental variable quantile regression toolkit."""

from .bayes import Chain, PosteriorSummary, quasi_log_likelihood, summaries
from .bayes import sample as sample_quasi_posterior
from .data import (
    Dataset,
    EstimateResult,
    ModelSpec,
    ParameterBox,
    ValidationReport,
    instrument_matrix,
    load_dataset,
    validate,
    write_dataset,
)
from .gmm import (
    GmmObjective,
    default_weight,
    minimize_gmm,
    sample_moments,
    smoothed_sample_moments,
    survival_kernel,
)
from .identification import (
    BinaryIdDiagnostic,
    MlrReport,
    diagnose,
    jacobian,
    mlr_check,
    pi_map,
)
from .iqr import IqrProfile, coefficient_process, first_stage_strength
from .iqr import estimate as iqr_estimate
from .iqr import profile as iqr_profile
from .orthogonal import (
    OrthoScore,
    cue_estimate,
    orthogonality_check,
    ortho_score,
    qlr2_region,
    regularized_delta,
)
from .qte import (
    QuantileProcess,
    conditional_cdf,
    default_tau_grid,
    marginal_quantile,
    monotonize,
    qte_table_rows,
    quantile_process,
    structural_quantile,
    unconditional_cdf,
    unconditional_qte,
)
from .quantreg import QRFit, check_loss, fit_qr, fit_qr_l1, qr_covariance
from .robust import (
    ConfidenceRegion,
    ar_region,
    chi2_quantile,
    finite_sample_distribution,
    finite_sample_region,
    qlr_region,
)

__version__ = "0.1.0"
