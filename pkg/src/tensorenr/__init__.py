"""Low-rank tensor completion and robust tensor PCA with Euclidean-norm
rank regularizers on CP factors."""

from .core import (
    ObservationMask,
    cp_reconstruct,
    fold,
    khatri_rao,
    masked_residual,
    sample_mask,
    spectral_norm_est,
    unfold,
)
from .harness import (
    ExperimentSpec,
    Metrics,
    NumericFailure,
    best_lambda,
    gen_lrtc_data,
    gen_trpca_data,
    lambda_grid,
    psnr,
    relative_error,
    run_experiment,
    run_single,
)
from .lrtc import (
    LrtcConfig,
    SolveReport,
    bcde_solve,
    estimate_lipschitz,
    extrapolation_weight,
    init_factors,
    objective,
    quasi_newton_solve,
    smooth_grad,
)
from .regularizers import (
    RegularizerSpec,
    balance_factors,
    component_magnitudes,
    prox_group_soft,
    prox_irls,
    prox_ridge_scale,
    reg_value,
    soft_threshold_elem,
)
from .tensorio import read_mask, read_tensor, write_mask, write_tensor
from .trpca import (
    TrpcaConfig,
    trpca_admm_solve,
    trpca_als_solve,
    trpca_asym_solve,
    trpca_solve,
    trpca_x_update,
)

__version__ = "0.1.0"

__all__ = [
    "ObservationMask",
    "cp_reconstruct",
    "fold",
    "khatri_rao",
    "masked_residual",
    "sample_mask",
    "spectral_norm_est",
    "unfold",
    "ExperimentSpec",
    "Metrics",
    "NumericFailure",
    "best_lambda",
    "gen_lrtc_data",
    "gen_trpca_data",
    "lambda_grid",
    "psnr",
    "relative_error",
    "run_experiment",
    "run_single",
    "LrtcConfig",
    "SolveReport",
    "bcde_solve",
    "estimate_lipschitz",
    "extrapolation_weight",
    "init_factors",
    "objective",
    "quasi_newton_solve",
    "smooth_grad",
    "RegularizerSpec",
    "balance_factors",
    "component_magnitudes",
    "prox_group_soft",
    "prox_irls",
    "prox_ridge_scale",
    "reg_value",
    "soft_threshold_elem",
    "read_mask",
    "read_tensor",
    "write_mask",
    "write_tensor",
    "TrpcaConfig",
    "trpca_admm_solve",
    "trpca_als_solve",
    "trpca_asym_solve",
    "trpca_solve",
    "trpca_x_update",
]
