use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ad::{Dual, Tape, Var};
use crate::dynamics::{check_finite, DynamicalSystem};
use crate::error::{Error, Result};
use crate::linalg::norm;

/// Directions propagated together in one forward-mode evaluation.
const CHUNK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMode {
    /// Dual-number evaluation of the step map.
    AdForward,
    /// Taped evaluation of the step map, swept backwards.
    AdReverse,
    /// Central finite differences of the step map.
    FiniteDifference,
}

/// Source of Jacobian products of a step map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DerivativeProvider {
    pub mode: DerivativeMode,
    /// Relative FD step; the absolute step is `h max(1, |u|)`.
    pub fd_step: f64,
}

impl Default for DerivativeProvider {
    fn default() -> Self {
        DerivativeProvider { mode: DerivativeMode::AdForward, fd_step: 1e-6 }
    }
}

/// A tangent direction in state and parameter space.
#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub du: Vec<f64>,
    pub dp: Vec<f64>,
}

impl Direction {
    pub fn state(du: Vec<f64>, np: usize) -> Self {
        Direction { du, dp: vec![0.0; np] }
    }
}

fn check_dims<S: DynamicalSystem>(sys: &S, u: &[f64], p: &[f64]) -> Result<()> {
    if u.len() != sys.dim() {
        return Err(Error::Dimension { expected: sys.dim(), got: u.len() });
    }
    if p.len() != sys.param_names().len() {
        return Err(Error::Dimension { expected: sys.param_names().len(), got: p.len() });
    }
    Ok(())
}

impl DerivativeProvider {
    pub fn new(mode: DerivativeMode) -> Self {
        DerivativeProvider { mode, ..Default::default() }
    }

    pub fn finite_difference(h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Input(format!("finite-difference step must be positive, got {h}")));
        }
        Ok(DerivativeProvider { mode: DerivativeMode::FiniteDifference, fd_step: h })
    }

    fn check(&self) -> Result<()> {
        if self.mode == DerivativeMode::FiniteDifference && !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::Input(format!("finite-difference step must be positive, got {}", self.fd_step)));
        }
        Ok(())
    }

    /// `(D_u f) w + (D_S f) dp` at `(u, p)`.
    pub fn jvp<S: DynamicalSystem>(&self, sys: &S, u: &[f64], p: &[f64], w: &[f64], dp: &[f64]) -> Result<Vec<f64>> {
        let dir = Direction { du: w.to_vec(), dp: dp.to_vec() };
        Ok(self.jvp_many(sys, u, p, std::slice::from_ref(&dir))?.pop().expect("one direction"))
    }

    /// Products with several directions at one point.
    pub fn jvp_many<S: DynamicalSystem>(
        &self,
        sys: &S,
        u: &[f64],
        p: &[f64],
        dirs: &[Direction],
    ) -> Result<Vec<Vec<f64>>> {
        self.check()?;
        check_dims(sys, u, p)?;
        for d in dirs {
            if d.du.len() != u.len() || d.dp.len() != p.len() {
                return Err(Error::Dimension { expected: u.len(), got: d.du.len() });
            }
        }
        let out = match self.mode {
            DerivativeMode::AdForward => forward_products(sys, u, p, dirs),
            DerivativeMode::AdReverse => {
                let (ju, jp) = reverse_jacobians(sys, u, p);
                dirs.iter().map(|d| (&ju * nalgebra::DVector::from_column_slice(&d.du) + &jp * nalgebra::DVector::from_column_slice(&d.dp)).as_slice().to_vec()).collect()
            }
            DerivativeMode::FiniteDifference => dirs.iter().map(|d| self.fd_product(sys, u, p, d)).collect(),
        };
        for v in &out {
            check_finite(v, 0)?;
        }
        Ok(out)
    }

    /// `((D_u f)^T z, (D_S f)^T z)` at `(u, p)`.
    pub fn vjp<S: DynamicalSystem>(&self, sys: &S, u: &[f64], p: &[f64], z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok(self.vjp_many(sys, u, p, &[z.to_vec()])?.pop().expect("one cotangent"))
    }

    /// Transposed products with several cotangents at one point.
    pub fn vjp_many<S: DynamicalSystem>(
        &self,
        sys: &S,
        u: &[f64],
        p: &[f64],
        zs: &[Vec<f64>],
    ) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        self.check()?;
        check_dims(sys, u, p)?;
        for z in zs {
            if z.len() != u.len() {
                return Err(Error::Dimension { expected: u.len(), got: z.len() });
            }
        }
        let out: Vec<(Vec<f64>, Vec<f64>)> = match self.mode {
            DerivativeMode::AdReverse => reverse_products(sys, u, p, zs),
            _ => {
                let (ju, jp) = self.jacobians(sys, u, p)?;
                zs.iter()
                    .map(|z| {
                        let z = nalgebra::DVector::from_column_slice(z);
                        (ju.tr_mul(&z).as_slice().to_vec(), jp.tr_mul(&z).as_slice().to_vec())
                    })
                    .collect()
            }
        };
        for (a, b) in &out {
            check_finite(a, 0)?;
            check_finite(b, 0)?;
        }
        Ok(out)
    }

    /// State Jacobian `D_u f` (`d x d`) and parameter Jacobian `D_S f` (`d x p`).
    pub fn jacobians<S: DynamicalSystem>(&self, sys: &S, u: &[f64], p: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check()?;
        check_dims(sys, u, p)?;
        let (d, np) = (u.len(), p.len());
        if self.mode == DerivativeMode::AdReverse {
            return Ok(reverse_jacobians(sys, u, p));
        }
        let mut dirs = Vec::with_capacity(d + np);
        for i in 0..d {
            let mut e = Direction { du: vec![0.0; d], dp: vec![0.0; np] };
            e.du[i] = 1.0;
            dirs.push(e);
        }
        for i in 0..np {
            let mut e = Direction { du: vec![0.0; d], dp: vec![0.0; np] };
            e.dp[i] = 1.0;
            dirs.push(e);
        }
        let cols = self.jvp_many(sys, u, p, &dirs)?;
        let ju = DMatrix::from_fn(d, d, |i, j| cols[j][i]);
        let jp = DMatrix::from_fn(d, np, |i, j| cols[d + j][i]);
        Ok((ju, jp))
    }

    pub fn jacobian<S: DynamicalSystem>(&self, sys: &S, u: &[f64], p: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.jacobians(sys, u, p)?.0)
    }

    /// Gradient of observable `k` with respect to state and parameters.
    pub fn observable_gradient<S: DynamicalSystem>(
        &self,
        sys: &S,
        k: usize,
        u: &[f64],
        p: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check()?;
        check_dims(sys, u, p)?;
        if k >= sys.observable_names().len() {
            return Err(Error::Input(format!("observable index {k} out of range")));
        }
        match self.mode {
            DerivativeMode::FiniteDifference => {
                let h = self.fd_step * norm(u).max(1.0);
                let mut gu = vec![0.0; u.len()];
                let mut gp = vec![0.0; p.len()];
                let mut x = u.to_vec();
                for i in 0..u.len() {
                    x[i] = u[i] + h;
                    let a = sys.observe_with(k, &x, p);
                    x[i] = u[i] - h;
                    let b = sys.observe_with(k, &x, p);
                    x[i] = u[i];
                    gu[i] = (a - b) / (2.0 * h);
                }
                let mut q = p.to_vec();
                for i in 0..p.len() {
                    let hp = self.fd_step * p[i].abs().max(1.0);
                    q[i] = p[i] + hp;
                    let a = sys.observe_with(k, u, &q);
                    q[i] = p[i] - hp;
                    let b = sys.observe_with(k, u, &q);
                    q[i] = p[i];
                    gp[i] = (a - b) / (2.0 * hp);
                }
                Ok((gu, gp))
            }
            _ => {
                let tape = Tape::<f64>::with_capacity(4 * (u.len() + p.len()));
                let uv: Vec<Var<f64>> = u.iter().map(|&x| tape.var(x)).collect();
                let pv: Vec<Var<f64>> = p.iter().map(|&x| tape.var(x)).collect();
                let j = sys.observe_with(k, &uv, &pv);
                let adj = tape.pullback(&[(j, 1.0)]);
                Ok((uv.iter().map(|v| adj.wrt(v)).collect(), pv.iter().map(|v| adj.wrt(v)).collect()))
            }
        }
    }

    fn fd_product<S: DynamicalSystem>(&self, sys: &S, u: &[f64], p: &[f64], d: &Direction) -> Vec<f64> {
        let size = (norm(&d.du).powi(2) + norm(&d.dp).powi(2)).sqrt();
        if size == 0.0 {
            return vec![0.0; u.len()];
        }
        let scale = norm(u).max(1.0).max(norm(p));
        let h = self.fd_step * scale / size;
        let shift = |sign: f64| {
            let up: Vec<f64> = u.iter().zip(&d.du).map(|(x, w)| x + sign * h * w).collect();
            let pp: Vec<f64> = p.iter().zip(&d.dp).map(|(x, w)| x + sign * h * w).collect();
            sys.step_with(&up, &pp)
        };
        let plus = shift(1.0);
        let minus = shift(-1.0);
        plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }
}

fn forward_products<S: DynamicalSystem>(sys: &S, u: &[f64], p: &[f64], dirs: &[Direction]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(dirs.len());
    for chunk in dirs.chunks(CHUNK) {
        let seed = |vals: &[f64], pick: &dyn Fn(&Direction) -> &[f64]| -> Vec<Dual<f64, CHUNK>> {
            vals.iter()
                .enumerate()
                .map(|(i, &x)| {
                    let mut eps = [0.0; CHUNK];
                    for (k, d) in chunk.iter().enumerate() {
                        eps[k] = pick(d)[i];
                    }
                    Dual::new(x, eps)
                })
                .collect()
        };
        let ud = seed(u, &|d| &d.du);
        let pd = seed(p, &|d| &d.dp);
        let next = sys.step_with(&ud, &pd);
        for k in 0..chunk.len() {
            out.push(next.iter().map(|x| x.eps[k]).collect());
        }
    }
    out
}

fn reverse_products<S: DynamicalSystem>(sys: &S, u: &[f64], p: &[f64], zs: &[Vec<f64>]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let tape = Tape::<f64>::with_capacity(64 * u.len());
    let uv: Vec<Var<f64>> = u.iter().map(|&x| tape.var(x)).collect();
    let pv: Vec<Var<f64>> = p.iter().map(|&x| tape.var(x)).collect();
    let next = sys.step_with(&uv, &pv);
    zs.iter()
        .map(|z| {
            let seeds: Vec<(Var<f64>, f64)> = next.iter().copied().zip(z.iter().copied()).collect();
            let adj = tape.pullback(&seeds);
            (uv.iter().map(|v| adj.wrt(v)).collect(), pv.iter().map(|v| adj.wrt(v)).collect())
        })
        .collect()
}

fn reverse_jacobians<S: DynamicalSystem>(sys: &S, u: &[f64], p: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = u.len();
    let rows: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            e
        })
        .collect();
    let prods = reverse_products(sys, u, p, &rows);
    let ju = DMatrix::from_fn(d, d, |i, j| prods[i].0[j]);
    let jp = DMatrix::from_fn(d, p.len(), |i, j| prods[i].1[j]);
    (ju, jp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearMap;
    use crate::Lorenz63System;

    const MODES: [DerivativeMode; 3] =
        [DerivativeMode::AdForward, DerivativeMode::AdReverse, DerivativeMode::FiniteDifference];

    #[test]
    fn linear_map_products() {
        let m = LinearMap::diagonal(&[2.0, 0.5]).unwrap();
        for mode in MODES {
            let dp = DerivativeProvider::new(mode);
            let j = dp.jvp(&m, &[0.3, -0.2], &[0.0], &[1.0, 0.0], &[0.0]).unwrap();
            assert!((j[0] - 2.0).abs() < 1e-8 && j[1].abs() < 1e-8, "{mode:?}: {j:?}");
            let (zu, _) = dp.vjp(&m, &[0.3, -0.2], &[0.0], &[0.0, 1.0]).unwrap();
            assert!(zu[0].abs() < 1e-8 && (zu[1] - 0.5).abs() < 1e-8);
            let zero = dp.jvp(&m, &[0.3, -0.2], &[0.0], &[0.0, 0.0], &[0.0]).unwrap();
            assert!(zero.iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn lorenz_hand_jacobian() {
        let sys = Lorenz63System::lorenz63(28.0).unwrap();
        for mode in MODES {
            let dp = DerivativeProvider::new(mode);
            let j = dp.jvp(&sys, &[1.0, 1.0, 1.0], &[28.0], &[1.0, 0.0, 0.0], &[0.0]).unwrap();
            let want = [0.95, 0.135, 0.005];
            for (a, b) in j.iter().zip(want) {
                assert!((a - b).abs() < 1e-8, "{mode:?}: {j:?}");
            }
        }
    }

    #[test]
    fn zero_fd_step_rejected() {
        assert!(DerivativeProvider::finite_difference(0.0).is_err());
        let sys = Lorenz63System::lorenz63(28.0).unwrap();
        let dp = DerivativeProvider { mode: DerivativeMode::FiniteDifference, fd_step: 0.0 };
        assert!(dp.jvp(&sys, &[1.0; 3], &[28.0], &[1.0; 3], &[0.0]).is_err());
    }

    #[test]
    fn observable_gradient_modes_agree() {
        let sys = crate::RijkeSystem::rijke(&Default::default()).unwrap();
        let u: Vec<f64> = (0..30).map(|i| 0.2 * (i as f64).cos()).collect();
        let p = [7.0, 0.2];
        for k in 0..4 {
            let (a, ap) = DerivativeProvider::new(DerivativeMode::AdReverse).observable_gradient(&sys, k, &u, &p).unwrap();
            let (b, bp) = DerivativeProvider::new(DerivativeMode::FiniteDifference).observable_gradient(&sys, k, &u, &p).unwrap();
            for (x, y) in a.iter().chain(&ap).zip(b.iter().chain(&bp)) {
                assert!((x - y).abs() < 1e-6, "observable {k}: {x} vs {y}");
            }
        }
    }
}
