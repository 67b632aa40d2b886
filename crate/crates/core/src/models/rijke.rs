use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::dynamics::{OdeSystem, Scheme, VectorField};
use crate::error::{Error, Result};
use crate::models::cheb;
use crate::scalar::Scalar;

pub const RIJKE_DT: f64 = 0.01;

/// Physical and discretization settings of the time-delayed Rijke model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RijkeConfig {
    pub beta: f64,
    pub tau: f64,
    pub c1: f64,
    pub c2: f64,
    /// Flame position as a fraction of the tube length.
    pub x_f: f64,
    pub d_g: usize,
    pub d_c: usize,
}

impl Default for RijkeConfig {
    fn default() -> Self {
        RijkeConfig { beta: 7.0, tau: 0.2, c1: 0.06, c2: 0.01, x_f: 0.7, d_g: 10, d_c: 10 }
    }
}

/// Smoothed King's law. `sqrt|1+u| - 1` away from flow reversal and a
/// quartic fit on `[-1.01, -0.99]` that removes the square-root kink.
pub fn heat_release<T: Scalar>(u: T) -> T {
    let w = u + T::one();
    if u >= T::cst(-1.01) && u <= T::cst(-0.99) {
        let w2 = w * w;
        T::cst(-1.0) + T::cst(1750.0) * w2 - T::cst(7.5e6) * w2 * w2
    } else {
        w.abs().sqrt() - T::one()
    }
}

/// Galerkin acoustics coupled to a Chebyshev advection line standing in for
/// the heat-release delay.
///
/// State layout: `eta_1..eta_dg`, `theta_1..theta_dg`, then the advected
/// velocity at the collocation nodes `y_k = cos(k pi / d_c)`, `k < d_c`.
/// Node 0 is the outflow `y = 1`, which drives the heat release; the inflow
/// node `y = -1` carries `u_f` and is substituted, not stored.
///
/// Parameters: `beta`, `tau`. Observables: `J_ac`, `J_ray`,
/// `rayleigh_source` (`beta p_f qdot`, whose mean balances `J_ray`), `u_f`.
#[derive(Clone, Debug)]
pub struct Rijke {
    d_g: usize,
    d_c: usize,
    x_f: f64,
    zeta: Vec<f64>,
    sin_f: Vec<f64>,
    cos_f: Vec<f64>,
    /// Rows `0..d_c` of the `(d_c+1)`-point differentiation matrix.
    diff: Vec<Vec<f64>>,
}

impl Rijke {
    pub fn new(cfg: &RijkeConfig) -> Result<Self> {
        let bad = |name: &str, reason: &str| Error::Parameter { name: name.into(), reason: reason.into() };
        if cfg.d_g < 2 {
            return Err(bad("d_g", "need at least 2 Galerkin modes"));
        }
        if cfg.d_c < 2 {
            return Err(bad("d_c", "need at least 2 Chebyshev points"));
        }
        if !(cfg.x_f > 0.0 && cfg.x_f < 1.0) {
            return Err(bad("x_f", "flame position must lie in (0, 1)"));
        }
        if !(cfg.c1 >= 0.0 && cfg.c2 >= 0.0 && cfg.c1.is_finite() && cfg.c2.is_finite()) {
            return Err(bad("c1/c2", "damping coefficients must be finite and non-negative"));
        }
        let (_, d) = cheb::<f64>(cfg.d_c + 1)?;
        let j = |k: usize| (k + 1) as f64;
        Ok(Rijke {
            d_g: cfg.d_g,
            d_c: cfg.d_c,
            x_f: cfg.x_f,
            zeta: (0..cfg.d_g).map(|k| cfg.c1 * j(k) * j(k) + cfg.c2 * j(k).sqrt()).collect(),
            sin_f: (0..cfg.d_g).map(|k| (j(k) * PI * cfg.x_f).sin()).collect(),
            cos_f: (0..cfg.d_g).map(|k| (j(k) * PI * cfg.x_f).cos()).collect(),
            diff: d.into_iter().take(cfg.d_c).collect(),
        })
    }

    pub fn galerkin_modes(&self) -> usize {
        self.d_g
    }

    pub fn chebyshev_points(&self) -> usize {
        self.d_c
    }

    pub fn flame_position(&self) -> f64 {
        self.x_f
    }

    pub fn damping(&self) -> &[f64] {
        &self.zeta
    }

    /// Velocity at the flame, `u_f = sum_k eta_k cos(k pi x_f)`.
    pub fn flame_velocity<T: Scalar>(&self, u: &[T]) -> T {
        u[..self.d_g].iter().zip(&self.cos_f).fold(T::zero(), |acc, (&e, &c)| acc + e * T::cst(c))
    }

    /// Acoustic pressure at the flame, `p_f = -sum_k theta_k sin(k pi x_f)`.
    pub fn flame_pressure<T: Scalar>(&self, u: &[T]) -> T {
        -u[self.d_g..2 * self.d_g].iter().zip(&self.sin_f).fold(T::zero(), |acc, (&t, &s)| acc + t * T::cst(s))
    }

    /// `dv/dt = -(2/tau) D v` on the stored nodes with `v(-1) = inflow`.
    pub fn advection_rhs<T: Scalar>(&self, v: &[T], inflow: T, tau: T, dv: &mut [T]) {
        let speed = T::cst(2.0) / tau;
        for (row, out) in self.diff.iter().zip(dv.iter_mut()) {
            let mut acc = T::cst(row[self.d_c]) * inflow;
            for (&dkl, &vl) in row.iter().zip(v) {
                acc = acc + T::cst(dkl) * vl;
            }
            *out = -speed * acc;
        }
    }

    /// Eigenvalues of the advection operator with frozen inflow.
    fn advection_spectrum(&self, tau: f64) -> Vec<Complex<f64>> {
        let n = self.d_c;
        let m = DMatrix::from_fn(n, n, |i, j| -2.0 / tau * self.diff[i][j]);
        m.complex_eigenvalues().iter().copied().collect()
    }
}

pub fn acoustic_energy<T: Scalar>(d_g: usize, u: &[T]) -> T {
    u[..2 * d_g].iter().fold(T::zero(), |acc, &x| acc + x * x) * T::cst(0.25)
}

pub fn rayleigh_index<T: Scalar>(zeta: &[f64], u: &[T]) -> T {
    let d_g = zeta.len();
    u[d_g..2 * d_g].iter().zip(zeta).fold(T::zero(), |acc, (&t, &z)| acc + T::cst(z) * t * t) * T::cst(0.5)
}

impl VectorField for Rijke {
    fn dim(&self) -> usize {
        2 * self.d_g + self.d_c
    }
    fn param_names(&self) -> &[&'static str] {
        &["beta", "tau"]
    }
    fn observable_names(&self) -> &[&'static str] {
        &["J_ac", "J_ray", "rayleigh_source", "u_f"]
    }

    fn rhs<T: Scalar>(&self, u: &[T], p: &[T], du: &mut [T]) {
        let g = self.d_g;
        let (beta, tau) = (p[0], p[1]);
        let qdot = heat_release(u[2 * g]);
        for k in 0..g {
            let jpi = T::cst((k + 1) as f64 * PI);
            let (eta, theta) = (u[k], u[g + k]);
            du[k] = jpi * theta;
            du[g + k] = -jpi * eta
                - T::cst(self.zeta[k]) * theta
                - T::cst(2.0) * beta * qdot * T::cst(self.sin_f[k]);
        }
        self.advection_rhs(&u[2 * g..], self.flame_velocity(u), tau, &mut du[2 * g..]);
    }

    fn observable<T: Scalar>(&self, k: usize, u: &[T], p: &[T]) -> T {
        match k {
            0 => acoustic_energy(self.d_g, u),
            1 => rayleigh_index(&self.zeta, u),
            2 => p[0] * self.flame_pressure(u) * heat_release(u[2 * self.d_g]),
            3 => self.flame_velocity(u),
            _ => panic!("observable index {k} out of range"),
        }
    }

    fn check_params(&self, p: &[f64]) -> Result<()> {
        if !p[0].is_finite() {
            return Err(Error::Parameter { name: "beta".into(), reason: "must be finite".into() });
        }
        if !(p[1] > 0.0 && p[1].is_finite()) {
            return Err(Error::Parameter { name: "tau".into(), reason: format!("must be positive, got {}", p[1]) });
        }
        Ok(())
    }

    fn stiff_spectrum(&self, p: &[f64]) -> Option<Vec<Complex<f64>>> {
        let mut spec = self.advection_spectrum(p[1]);
        for (k, &z) in self.zeta.iter().enumerate() {
            let w = (k + 1) as f64 * PI;
            let disc = Complex::new(z * z - 4.0 * w * w, 0.0).sqrt();
            spec.push((Complex::new(-z, 0.0) + disc) * 0.5);
            spec.push((Complex::new(-z, 0.0) - disc) * 0.5);
        }
        Some(spec)
    }
}

impl OdeSystem<Rijke> {
    /// Tsit5 at `dt = 0.01`.
    pub fn rijke(cfg: &RijkeConfig) -> Result<Self> {
        Self::rijke_with(cfg, Scheme::Tsit5, RIJKE_DT)
    }

    pub fn rijke_with(cfg: &RijkeConfig, scheme: Scheme, dt: f64) -> Result<Self> {
        OdeSystem::new(Rijke::new(cfg)?, scheme, dt, vec![cfg.beta, cfg.tau])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::Dual;
    use crate::dynamics::DynamicalSystem;

    #[test]
    fn kings_law_values_and_band_edges() {
        assert_eq!(heat_release(0.0), 0.0);
        assert_eq!(heat_release(3.0), 1.0);
        assert_eq!(heat_release(-1.0), -1.0);
        let poly = |u: f64| {
            let w = 1.0 + u;
            -1.0 + 1750.0 * w * w - 7.5e6 * w.powi(4)
        };
        let root = |u: f64| (1.0 + u).abs().sqrt() - 1.0;
        for edge in [-0.99, -1.01] {
            assert!((poly(edge) - root(edge)).abs() < 1e-12);
            assert!((heat_release(edge) + 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn damping_coefficients() {
        let r = Rijke::new(&RijkeConfig::default()).unwrap();
        assert!((r.damping()[0] - 0.07).abs() < 1e-15);
        assert!((r.damping()[1] - 0.254142).abs() < 1e-6);
    }

    #[test]
    fn zero_state_is_equilibrium() {
        let sys = OdeSystem::rijke(&RijkeConfig::default()).unwrap();
        assert_eq!(sys.dim(), 30);
        let du = sys.vector_field(&[0.0; 30]).unwrap();
        assert!(du.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn observables() {
        let r = Rijke::new(&RijkeConfig::default()).unwrap();
        let p = [7.0, 0.2];
        let mut u = vec![0.0; 30];
        assert_eq!(r.observable(0, &u, &p), 0.0);
        u[0] = 2.0;
        assert_eq!(r.observable(0, &u, &p), 1.0);
        u[0] = 1.0;
        u[10] = 1.0;
        assert_eq!(r.observable(0, &u, &p), 0.5);
        let mut u = vec![0.0; 30];
        u[10] = 1.0;
        assert!((r.observable(1, &u, &p) - 0.035).abs() < 1e-15);
        let mut u = vec![0.0; 30];
        u[11] = 1.0;
        assert!((r.observable(1, &u, &p) - 0.127071).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(OdeSystem::rijke(&RijkeConfig { tau: 0.0, ..Default::default() }).is_err());
        assert!(OdeSystem::rijke(&RijkeConfig { x_f: 1.0, ..Default::default() }).is_err());
        assert!(OdeSystem::rijke(&RijkeConfig { d_c: 1, ..Default::default() }).is_err());
        let sys = OdeSystem::rijke(&RijkeConfig::default()).unwrap();
        assert!(sys.with_param("tau", -0.1).is_err());
    }

    #[test]
    fn unstable_timestep_rejected() {
        let cfg = RijkeConfig::default();
        assert!(OdeSystem::rijke_with(&cfg, Scheme::Tsit5, 0.05).is_err());
        assert!(OdeSystem::rijke_with(&cfg, Scheme::Tsit5, RIJKE_DT).is_ok());
    }

    #[test]
    fn advection_delays_inflow_by_tau() {
        let r = Rijke::new(&RijkeConfig::default()).unwrap();
        let tau = 0.2;
        let (y, _) = cheb::<f64>(r.d_c + 1).unwrap();
        let inflow = |t: f64| (2.0 * t).sin();
        // exact profile v(y, t) = u_f(t - tau (1 + y) / 2), plus time as last slot
        let mut state: Vec<f64> = y[..r.d_c].iter().map(|yk| inflow(-tau * (1.0 + yk) / 2.0)).collect();
        state.push(0.0);
        let dt = RIJKE_DT;
        let field = |s: &[f64], ds: &mut [f64]| {
            let n = s.len() - 1;
            r.advection_rhs(&s[..n], inflow(s[n]), tau, &mut ds[..n]);
            ds[n] = 1.0;
        };
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            state = Scheme::Tsit5.advance(field, &state, dt);
            let t = state[r.d_c];
            worst = worst.max((state[0] - inflow(t - tau)).abs());
        }
        assert!(worst < 1e-3, "delay error {worst}");
    }

    #[test]
    fn tau_derivative_matches_finite_difference() {
        let sys = OdeSystem::rijke(&RijkeConfig::default()).unwrap();
        let u: Vec<f64> = (0..30).map(|i| 0.1 * ((i as f64) * 0.7).sin()).collect();
        let ud: Vec<Dual<f64, 1>> = u.iter().map(|&x| Dual::constant(x)).collect();
        let pd = [Dual::constant(7.0), Dual::variable(0.2, 0)];
        let jvp: Vec<f64> = sys.step_with(&ud, &pd).iter().map(|x| x.eps[0]).collect();
        let h = 1e-5;
        let up = sys.step_with(&u, &[7.0, 0.2 + h]);
        let um = sys.step_with(&u, &[7.0, 0.2 - h]);
        let fd: Vec<f64> = up.iter().zip(&um).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let norm = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        let err = jvp.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(norm > 0.0 && jvp.iter().all(|x| x.is_finite()));
        assert!(err / norm < 1e-3, "relative error {}", err / norm);
    }
}
