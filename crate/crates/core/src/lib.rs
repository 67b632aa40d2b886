//! Sensitivities of long-time averages in chaotic systems by discrete
//! tangent and adjoint non-intrusive least squares shadowing.

pub mod ad;
pub mod assimilate;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod lyapunov;
pub mod models;
pub mod perturbation;
pub mod scalar;
pub mod nilss;
pub mod optimize;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// First-order forward-mode dual number over `f64` with one direction.
pub type Dual64 = ad::Dual<f64, 1>;
pub type Lorenz63System = dynamics::OdeSystem<models::Lorenz63>;
pub type RijkeSystem = dynamics::OdeSystem<models::Rijke>;
