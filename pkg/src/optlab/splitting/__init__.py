"""Variance-reduced estimators, stochastic decoupling and primal-dual solvers."""
from .estimators import GradEstimator, estimator_next, make_estimator
from .primal_dual import (
    BlockSeparable,
    LinOp,
    StepsizeConditionError,
    composite_reference,
    condat_vu_run,
    destroy_run,
    fused_lasso_D,
    fused_lasso_spectrum,
    laplacian,
    licosgd_dual_solution,
    licosgd_lyapunov,
    licosgd_run,
    pd3o_run,
    pddy_matching_init,
    pddy_run,
    prilicosgd_run,
    spectral_norm,
)
from .sdm import (
    SDM_PRESETS,
    DualState,
    affine_solution_distance,
    project_row,
    randomized_kaczmarz,
    sdm_kaczmarz_mode,
    sdm_linear_run,
    sdm_run,
    sdm_step,
    sdm_stepsize_preset,
)
