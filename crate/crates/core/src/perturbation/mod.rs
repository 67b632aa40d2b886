//! Jacobian products of step maps and the plain finite-time sensitivities
//! they feed.

mod naive;
mod provider;

pub use naive::{finite_time_sensitivity, log_slope, perturbation_growth, Case, GrowthSeries};
pub use provider::{DerivativeMode, DerivativeProvider, Direction};
