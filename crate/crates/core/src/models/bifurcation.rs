use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve, spin_up, steps_for, OdeSystem, Record};
use crate::error::{Error, Result};
use crate::lyapunov::{classify, lyapunov_spectrum, Regime};
use crate::models::{Rijke, RijkeConfig};
use crate::perturbation::DerivativeProvider;

/// Run lengths of a scan, in time units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanOptions {
    pub runup: f64,
    pub window: f64,
    /// Basis alignment before exponents are averaged.
    pub align: f64,
    pub exponents: usize,
    /// Standard deviation of the random initial state.
    pub initial_spread: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions { runup: 500.0, window: 200.0, align: 5.0, exponents: 3, initial_spread: 0.05 }
    }
}

/// One row of the scan. `error` is set, and the numbers are NaN, when the
/// run at this `beta` failed.
#[derive(Clone, Debug, Serialize)]
pub struct BifurcationPoint {
    pub beta: f64,
    pub j_ac: f64,
    pub j_ray: f64,
    pub exponents: Vec<f64>,
    pub regime: Option<Regime>,
    pub error: Option<String>,
}

/// `beta` values from `start` to `end` inclusive with spacing `step`.
pub fn beta_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(end >= start) {
        return Err(Error::Input(format!("bad beta range {start}..{end} step {step}")));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

/// Time averages of `J_ac` and `J_ray`, leading exponents and regime at each
/// `beta`, with everything else from `base`. Points run in parallel; a
/// blowup is recorded in its row and the scan carries on.
pub fn bifurcation_scan(base: &RijkeConfig, betas: &[f64], opts: &ScanOptions, seed: u64) -> Vec<BifurcationPoint> {
    betas
        .par_iter()
        .map(|&beta| match scan_point(base, beta, opts, seed) {
            Ok(p) => p,
            Err(e) => BifurcationPoint {
                beta,
                j_ac: f64::NAN,
                j_ray: f64::NAN,
                exponents: vec![f64::NAN; opts.exponents],
                regime: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

fn scan_point(base: &RijkeConfig, beta: f64, opts: &ScanOptions, seed: u64) -> Result<BifurcationPoint> {
    let sys = OdeSystem::<Rijke>::rijke(&RijkeConfig { beta, ..base.clone() })?;
    let u0 = random_state(crate::dynamics::DynamicalSystem::dim(&sys), opts.initial_spread, seed)?;
    let u = spin_up(&sys, &u0, opts.runup)?;
    let n = steps_for(&sys, opts.window).max(1);
    let ev = evolve(&sys, &u, n, &Record { observables: vec![0, 1], ..Default::default() })?;
    let ly = lyapunov_spectrum(
        &sys,
        &DerivativeProvider::default(),
        &u,
        opts.exponents,
        n,
        steps_for(&sys, opts.align),
        seed,
    )?;
    Ok(BifurcationPoint {
        beta,
        j_ac: ev.averages[0].value,
        j_ray: ev.averages[1].value,
        regime: Some(classify(&ly.exponents)),
        exponents: ly.exponents,
        error: None,
    })
}

/// Seeded Gaussian state with standard deviation `spread`.
pub fn random_state(d: usize, spread: f64, seed: u64) -> Result<Vec<f64>> {
    let dist = Normal::new(0.0, spread).map_err(|e| Error::Input(format!("initial spread: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..d).map(|_| dist.sample(&mut rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_inclusive() {
        let g = beta_grid(6.5, 7.2, 0.1).unwrap();
        assert_eq!(g.len(), 8);
        assert!((g[7] - 7.2).abs() < 1e-12);
        assert!(beta_grid(1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn failed_point_is_recorded() {
        let cfg = RijkeConfig::default();
        let opts = ScanOptions { runup: 1.0, window: 1.0, ..Default::default() };
        let pts = bifurcation_scan(&cfg, &[-1.0e9, 0.5], &opts, 3);
        assert_eq!(pts.len(), 2);
        assert!(pts[0].error.is_some() && pts[0].regime.is_none());
        assert!(pts[1].error.is_none());
    }
}
