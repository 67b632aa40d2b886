//! Operator-overloading automatic differentiation.
//!
//! [`Dual`] propagates directional derivatives forward; [`Tape`]/[`Var`]
//! record a computation and back-propagate cotangents.

mod dual;
mod tape;

pub use dual::Dual;
pub use tape::{Adjoints, Tape, Var};
