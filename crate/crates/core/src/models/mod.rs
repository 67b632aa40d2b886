//! Built-in systems: Lorenz'63 and the time-delayed Rijke tube.

mod bifurcation;
mod cheb;
mod lorenz;
mod rijke;

pub use bifurcation::{beta_grid, bifurcation_scan, random_state, BifurcationPoint, ScanOptions};
pub use cheb::cheb;
pub use lorenz::{lorenz_rhs, Lorenz63, LORENZ_DT, LORENZ_RHO};
pub use rijke::{acoustic_energy, heat_release, rayleigh_index, Rijke, RijkeConfig, RIJKE_DT};
