//! Discrete tangent/adjoint non-intrusive least squares shadowing: the
//! n-loop, the minimum-norm block least squares and the sensitivity
//! assembly, in matrix mode or driven directly by AD.

mod lsq;
mod nloop;
mod sensitivity;

pub use lsq::{
    constraint_residual, dense_system, g_transpose, min_norm_coefficients, stack, CenterRow, Coefficients,
    CONDITION_WARNING,
};
pub use nloop::{n_loop, AdSteps, CenterData, LinearizedSteps, MatrixSteps, PerturbationSequence};
pub use sensitivity::{
    adjoint_sensitivity, initial_basis, shadowing_sensitivity, solve_window, tangent_sensitivity, time_dilation,
    window_sensitivity, window_starts, Diagnostics, Linearization, SamplerOptions, SensitivityEstimate,
    ShadowingOptions, ShadowingSolution, WindowSensitivity, WindowStarts,
};
