//! Time-one maps, explicit integrators, orbits and finite-time averages.

mod integrator;
mod system;
mod trajectory;

pub use integrator::Scheme;
pub use system::{DynamicalSystem, LinearMap, OdeSystem, VectorField, BLOWUP_THRESHOLD};
pub use trajectory::{evolve, orbit, spin_up, std_error, steps_for, Evolution, Record, TimeAverage, Trajectory};

pub(crate) use system::check_finite;
