//! The scalar abstraction every model and integrator is written against.
//!
//! Step maps are evaluated over plain floats for the primal orbit, over
//! [`Dual`](crate::ad::Dual) numbers for forward-mode derivatives and over
//! [`Var`](crate::ad::Var) tape handles for reverse mode. Anything that
//! implements [`Scalar`] can flow through a model's right-hand side.

use std::fmt::Debug;
use std::ops::Neg;

use num_traits::{FromPrimitive, Num};

/// Arithmetic needed by the built-in models and integrators.
///
/// Comparisons (`PartialOrd`) look at the primal value only, which is what
/// the piecewise heat-release law needs to pick its branch.
pub trait Scalar: Copy + Debug + PartialOrd + Num + Neg<Output = Self> + FromPrimitive {
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn powi(self, n: i32) -> Self;

    /// Primal value as `f64`.
    fn re(self) -> f64;

    /// Lift a constant.
    #[inline]
    fn cst(x: f64) -> Self {
        // from_f64 is total for every implementor in this crate
        Self::from_f64(x).expect("constant representable")
    }
}

macro_rules! impl_float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn sin(self) -> Self {
                <$t>::sin(self)
            }
            #[inline]
            fn cos(self) -> Self {
                <$t>::cos(self)
            }
            #[inline]
            fn powi(self, n: i32) -> Self {
                <$t>::powi(self, n)
            }
            #[inline]
            fn re(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_float_scalar!(f32);
impl_float_scalar!(f64);

/// Lift a slice of `f64` into any scalar type.
pub fn lift<T: Scalar>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::cst(x)).collect()
}
