use crate::dynamics::{OdeSystem, Scheme, VectorField};
use crate::error::Result;
use crate::scalar::Scalar;

pub const LORENZ_DT: f64 = 0.005;
pub const LORENZ_RHO: f64 = 28.0;

/// Lorenz'63 convection model with `sigma = 10`, `b = 8/3` and the
/// Rayleigh-like parameter `s` exposed for differentiation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Lorenz63;

/// `du/dt` of Lorenz'63 at parameter `s`.
pub fn lorenz_rhs<T: Scalar>(u: &[T], s: T, du: &mut [T]) {
    let (x, y, z) = (u[0], u[1], u[2]);
    du[0] = T::cst(10.0) * (y - x);
    du[1] = x * (s - z) - y;
    du[2] = x * y - T::cst(8.0 / 3.0) * z;
}

impl VectorField for Lorenz63 {
    fn dim(&self) -> usize {
        3
    }
    fn param_names(&self) -> &[&'static str] {
        &["s"]
    }
    fn observable_names(&self) -> &[&'static str] {
        &["x", "y", "z"]
    }
    fn rhs<T: Scalar>(&self, u: &[T], p: &[T], du: &mut [T]) {
        lorenz_rhs(u, p[0], du)
    }
    fn observable<T: Scalar>(&self, k: usize, u: &[T], _p: &[T]) -> T {
        u[k]
    }
}

impl OdeSystem<Lorenz63> {
    /// Forward Euler at `dt = 0.005`, the validation setting.
    pub fn lorenz63(s: f64) -> Result<Self> {
        OdeSystem::new(Lorenz63, Scheme::ForwardEuler, LORENZ_DT, vec![s])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DynamicalSystem;

    #[test]
    fn rhs_values() {
        let mut du = [0.0; 3];
        lorenz_rhs(&[0.0, 0.0, 0.0], 28.0, &mut du);
        assert_eq!(du, [0.0; 3]);
        lorenz_rhs(&[1.0, 1.0, 1.0], 28.0, &mut du);
        assert_eq!(du[0], 0.0);
        assert_eq!(du[1], 26.0);
        assert!((du[2] + 5.0 / 3.0).abs() < 1e-15);
        let r = 72.0f64.sqrt();
        lorenz_rhs(&[r, r, 27.0], 28.0, &mut du);
        assert!(du.iter().all(|x| x.abs() < 1e-12), "{du:?}");
    }

    #[test]
    fn euler_step_from_ones() {
        let sys = OdeSystem::lorenz63(28.0).unwrap();
        let u = sys.step(&[1.0, 1.0, 1.0]).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-15);
        assert!((u[1] - 1.13).abs() < 1e-14);
        assert!((u[2] - 0.991_666_666_666_666_7).abs() < 1e-14);
    }

    #[test]
    fn equilibrium_is_fixed() {
        let sys = OdeSystem::lorenz63(28.0).unwrap();
        let r = 72.0f64.sqrt();
        let u = sys.step(&[r, r, 27.0]).unwrap();
        assert!((u[0] - r).abs() < 1e-12 && (u[2] - 27.0).abs() < 1e-12);
    }
}
