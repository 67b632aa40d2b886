use nalgebra::Complex;

use crate::dynamics::Scheme;
use crate::error::{Error, Result};
use crate::scalar::{lift, Scalar};

/// Any component with absolute value above this is treated as divergence.
pub const BLOWUP_THRESHOLD: f64 = 1e8;

/// Continuous-time right-hand side `du/dt = F(u, S)` with named parameters
/// and scalar observables.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn param_names(&self) -> &[&'static str];
    fn observable_names(&self) -> &[&'static str];
    fn rhs<T: Scalar>(&self, u: &[T], p: &[T], du: &mut [T]);
    fn observable<T: Scalar>(&self, k: usize, u: &[T], p: &[T]) -> T;

    fn check_params(&self, _p: &[f64]) -> Result<()> {
        Ok(())
    }

    /// Eigenvalues of the stiffest linear part of the field at parameters `p`,
    /// used to reject unstable explicit timesteps. `None` skips the check.
    fn stiff_spectrum(&self, _p: &[f64]) -> Option<Vec<Complex<f64>>> {
        None
    }
}

/// A parameterized time-one map `u' = f(u, S)` with observables.
///
/// `step_with` must be a pure function of its arguments; every derivative
/// provider relies on re-evaluating it over different scalar types.
pub trait DynamicalSystem: Send + Sync {
    fn dim(&self) -> usize;
    /// Time units per application of the map.
    fn dt(&self) -> f64;
    fn params(&self) -> &[f64];
    fn param_names(&self) -> &[&'static str];
    fn observable_names(&self) -> &[&'static str];

    fn step_with<T: Scalar>(&self, u: &[T], p: &[T]) -> Vec<T>;
    fn observe_with<T: Scalar>(&self, k: usize, u: &[T], p: &[T]) -> T;

    /// Continuous right-hand side, when the map discretizes an ODE.
    fn vector_field(&self, _u: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Copy of the system with a different parameter vector.
    fn with_params(&self, p: &[f64]) -> Result<Self>
    where
        Self: Sized;

    fn param_index(&self, name: &str) -> Result<usize> {
        self.param_names().iter().position(|n| *n == name).ok_or_else(|| Error::Parameter {
            name: name.to_string(),
            reason: format!("unknown; expected one of {:?}", self.param_names()),
        })
    }

    fn observable_index(&self, name: &str) -> Result<usize> {
        self.observable_names().iter().position(|n| *n == name).ok_or_else(|| {
            Error::Input(format!(
                "unknown observable `{name}`; expected one of {:?}",
                self.observable_names()
            ))
        })
    }

    /// `f(u, S)` at the current parameters, with dimension and blowup checks.
    fn step(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.step_at(u, self.params(), 0)
    }

    /// `f(u, p)` tagged with a step index for error reporting.
    fn step_at(&self, u: &[f64], p: &[f64], index: usize) -> Result<Vec<f64>> {
        if u.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: u.len() });
        }
        if p.len() != self.param_names().len() {
            return Err(Error::Dimension { expected: self.param_names().len(), got: p.len() });
        }
        let next = self.step_with(u, p);
        check_finite(&next, index)?;
        Ok(next)
    }

    fn observe(&self, k: usize, u: &[f64]) -> f64 {
        self.observe_with(k, u, self.params())
    }
}

pub(crate) fn check_finite(u: &[f64], step: usize) -> Result<()> {
    let magnitude = u.iter().fold(0.0f64, |m, x| if x.is_finite() { m.max(x.abs()) } else { f64::INFINITY });
    if magnitude > BLOWUP_THRESHOLD {
        return Err(Error::Blowup { step, magnitude });
    }
    Ok(())
}

/// A [`VectorField`] discretized by a fixed-step explicit scheme.
#[derive(Clone, Debug)]
pub struct OdeSystem<M> {
    pub field: M,
    pub scheme: Scheme,
    dt: f64,
    params: Vec<f64>,
}

impl<M: VectorField> OdeSystem<M> {
    pub fn new(field: M, scheme: Scheme, dt: f64, params: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Input(format!("timestep must be positive, got {dt}")));
        }
        if params.len() != field.param_names().len() {
            return Err(Error::Dimension { expected: field.param_names().len(), got: params.len() });
        }
        field.check_params(&params)?;
        if let Some(spectrum) = field.stiff_spectrum(&params) {
            let worst = spectrum.iter().map(|l| scheme.amplification(l * dt).norm()).fold(0.0, f64::max);
            if worst > 1.0 + 1e-9 {
                return Err(Error::Input(format!(
                    "timestep {dt} is linearly unstable for {scheme:?} (max amplification {worst:.4})"
                )));
            }
        }
        Ok(OdeSystem { field, scheme, dt, params })
    }

    /// Copy with one named parameter changed.
    pub fn with_param(&self, name: &str, value: f64) -> Result<Self>
    where
        M: Clone,
    {
        let i = self.param_index(name)?;
        let mut p = self.params.clone();
        p[i] = value;
        self.with_params(&p)
    }
}

impl<M: VectorField + Clone> DynamicalSystem for OdeSystem<M> {
    fn dim(&self) -> usize {
        self.field.dim()
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn params(&self) -> &[f64] {
        &self.params
    }
    fn param_names(&self) -> &[&'static str] {
        self.field.param_names()
    }
    fn observable_names(&self) -> &[&'static str] {
        self.field.observable_names()
    }

    fn step_with<T: Scalar>(&self, u: &[T], p: &[T]) -> Vec<T> {
        let field = &self.field;
        self.scheme.advance(|x, dx| field.rhs(x, p, dx), u, T::cst(self.dt))
    }

    fn observe_with<T: Scalar>(&self, k: usize, u: &[T], p: &[T]) -> T {
        self.field.observable(k, u, p)
    }

    fn vector_field(&self, u: &[f64]) -> Option<Vec<f64>> {
        let mut du = vec![0.0; u.len()];
        self.field.rhs(u, &self.params, &mut du);
        Some(du)
    }

    fn with_params(&self, p: &[f64]) -> Result<Self> {
        OdeSystem::new(self.field.clone(), self.scheme, self.dt, p.to_vec())
    }
}

/// Affine map `f(u, s) = A u + s b`, observing each coordinate.
///
/// Handy as an analytically tractable system: its Jacobian is `A`, its
/// parameter derivative is `b` and its Lyapunov exponents are the logs of
/// the singular growth rates of `A`.
#[derive(Clone, Debug)]
pub struct LinearMap {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    s: [f64; 1],
}

const LINEAR_OBS: [&str; 4] = ["u0", "u1", "u2", "u3"];

impl LinearMap {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let d = a.len();
        if d == 0 || d > LINEAR_OBS.len() {
            return Err(Error::Input(format!("linear map dimension must be 1..=4, got {d}")));
        }
        if a.iter().any(|r| r.len() != d) || b.len() != d {
            return Err(Error::Input("matrix must be square and match b".into()));
        }
        Ok(LinearMap { a, b, s: [0.0] })
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let d = diag.len();
        let a = (0..d).map(|i| (0..d).map(|j| if i == j { diag[i] } else { 0.0 }).collect()).collect();
        LinearMap::new(a, vec![0.0; d])
    }
}

impl DynamicalSystem for LinearMap {
    fn dim(&self) -> usize {
        self.a.len()
    }
    fn dt(&self) -> f64 {
        1.0
    }
    fn params(&self) -> &[f64] {
        &self.s
    }
    fn param_names(&self) -> &[&'static str] {
        &["s"]
    }
    fn observable_names(&self) -> &[&'static str] {
        &LINEAR_OBS[..self.a.len()]
    }
    fn step_with<T: Scalar>(&self, u: &[T], p: &[T]) -> Vec<T> {
        let b: Vec<T> = lift(&self.b);
        self.a
            .iter()
            .zip(b)
            .map(|(row, bi)| {
                row.iter().zip(u).fold(p[0] * bi, |acc, (&aij, &uj)| acc + T::cst(aij) * uj)
            })
            .collect()
    }
    fn observe_with<T: Scalar>(&self, k: usize, u: &[T], _p: &[T]) -> T {
        u[k]
    }
    fn with_params(&self, p: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        m.s = [p[0]];
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_steps() {
        let m = LinearMap::diagonal(&[2.0, 0.5]).unwrap();
        assert_eq!(m.step(&[1.0, 1.0]).unwrap(), vec![2.0, 0.5]);
        assert!(matches!(m.step(&[1.0]), Err(Error::Dimension { expected: 2, got: 1 })));
    }

    #[test]
    fn blowup_detected() {
        let m = LinearMap::diagonal(&[1e9]).unwrap();
        assert!(matches!(m.step_at(&[1.0], &[0.0], 7), Err(Error::Blowup { step: 7, .. })));
        let m = LinearMap::diagonal(&[f64::NAN]).unwrap();
        assert!(m.step(&[1.0]).is_err());
    }
}
