//! Steepest descent on a long-time average using shadowing gradients.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve, spin_up, steps_for, DynamicalSystem, Record};
use crate::error::{Error, Result};
use crate::lyapunov::{classify, Regime};
use crate::nilss::{shadowing_sensitivity, SamplerOptions, ShadowingOptions};
use crate::perturbation::Case;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescentConfig {
    pub parameter: String,
    pub observable: String,
    /// Relaxation factor.
    pub gamma: f64,
    /// Stop once the objective drops below this fraction of its initial value.
    pub stop_fraction: f64,
    pub max_iterations: usize,
    /// Shadowing windows per gradient.
    pub samples: usize,
    /// Length of each window in time units.
    pub window: f64,
    /// Run-up at each iterate before sampling, in time units.
    pub runup: f64,
    /// Primal run for the objective, in time units.
    pub average_window: f64,
    pub case: Case,
    pub shadowing: ShadowingOptions,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            parameter: "beta".into(),
            observable: "J_ac".into(),
            gamma: 0.1,
            stop_fraction: 0.01,
            max_iterations: 100,
            samples: 50,
            window: 20.0,
            runup: 500.0,
            average_window: 200.0,
            case: Case::Tangent,
            shadowing: ShadowingOptions::default(),
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Input(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.stop_fraction > 0.0 && self.stop_fraction < 1.0) {
            return Err(Error::Input(format!("stop fraction must lie in (0, 1), got {}", self.stop_fraction)));
        }
        if self.samples == 0 || !(self.window > 0.0) || !(self.average_window > 0.0) {
            return Err(Error::Input("samples, window and average window must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Iterate {
    pub iteration: usize,
    pub parameter: f64,
    pub objective: f64,
    pub gradient: f64,
    pub gradient_std_error: f64,
    /// Regime from the window-averaged leading exponents of the n-loop.
    pub regime: Regime,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "detail")]
pub enum Termination {
    Converged,
    MaxIterations,
    Failed(String),
}

#[derive(Clone, Debug, Serialize)]
pub struct DescentPath {
    pub iterates: Vec<Iterate>,
    pub termination: Termination,
}

/// `S_{n+1} = S_n - gamma d<J>/dS` from `S_0` until `<J>(S_n) <
/// stop_fraction <J>(S_0)`. Every iterate spins up afresh from `u0`.
pub fn minimize<S: DynamicalSystem>(sys: &S, u0: &[f64], start: f64, config: &DescentConfig, seed: u64) -> Result<DescentPath> {
    config.validate()?;
    let ip = sys.param_index(&config.parameter)?;
    let k = sys.observable_index(&config.observable)?;
    let sampler = SamplerOptions { window: config.window, samples: config.samples, runup: config.runup, ..Default::default() };
    let mut p = sys.params().to_vec();
    p[ip] = start;
    let mut iterates: Vec<Iterate> = Vec::new();
    let mut initial = None;
    for it in 0..=config.max_iterations {
        let step = (|| -> Result<Iterate> {
            let s = sys.with_params(&p)?;
            let u = spin_up(&s, u0, config.runup)?;
            let ev = evolve(&s, &u, steps_for(&s, config.average_window).max(1), &Record { observables: vec![k], ..Default::default() })?;
            let objective = ev.averages[0].value;
            let est = shadowing_sensitivity(&s, u0, config.case, &[ip], &[k], &config.shadowing, &sampler, seed.wrapping_add(it as u64))?;
            let nexp = est.exponents[0].len();
            let mean_exp: Vec<f64> =
                (0..nexp).map(|i| est.exponents.iter().map(|e| e[i]).sum::<f64>() / est.exponents.len() as f64).collect();
            let mut sorted = mean_exp;
            sorted.sort_by(|a, b| b.total_cmp(a));
            let gradient = est.mean[0][0];
            let se = est.std_error[0][0];
            let mut warnings = est.warnings;
            let sd = se * (config.samples as f64).sqrt();
            if sd > 10.0 * gradient.abs() {
                let msg = format!("gradient sample spread {sd:.3e} exceeds 10x the mean {gradient:.3e}");
                warn!("iteration {it}: {msg}");
                warnings.push(msg);
            }
            Ok(Iterate {
                iteration: it,
                parameter: p[ip],
                objective,
                gradient,
                gradient_std_error: se,
                regime: classify(&sorted),
                warnings,
            })
        })();
        let iterate = match step {
            Ok(x) => x,
            Err(e) => return Ok(DescentPath { iterates, termination: Termination::Failed(e.to_string()) }),
        };
        let j0 = *initial.get_or_insert(iterate.objective);
        let done = iterate.objective < config.stop_fraction * j0;
        p[ip] -= config.gamma * iterate.gradient;
        iterates.push(iterate);
        if done {
            return Ok(DescentPath { iterates, termination: Termination::Converged });
        }
    }
    Ok(DescentPath { iterates, termination: Termination::MaxIterations })
}
