//! State and parameter estimation along shadowing directions: twin
//! experiments and the descent loop on the observation misfit.

use log::{debug, warn};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{orbit, steps_for, DynamicalSystem, Trajectory};
use crate::error::{Error, Result};
use crate::nilss::{initial_basis, solve_window, AdSteps};
use crate::perturbation::{Case, DerivativeProvider};

/// Reference orbit, exact observations along it and a perturbed background.
#[derive(Clone, Debug)]
pub struct Twin {
    pub reference: Trajectory,
    pub observable: usize,
    /// `g(u_n)` for every state of the reference orbit.
    pub observations: Vec<f64>,
    pub background: Vec<f64>,
}

/// Reference orbit of `steps` steps from `u_ref` and a background equal to
/// `u_ref` plus Gaussian noise of the given variance on the components
/// selected by `mask` (all components when `None`).
pub fn generate_twin<S: DynamicalSystem>(
    sys: &S,
    u_ref: &[f64],
    steps: usize,
    observable: usize,
    variance: f64,
    mask: Option<&[usize]>,
    seed: u64,
) -> Result<Twin> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::Input(format!("noise variance must be non-negative, got {variance}")));
    }
    if observable >= sys.observable_names().len() {
        return Err(Error::Input(format!("observable index {observable} out of range")));
    }
    let reference = orbit(sys, u_ref, steps)?;
    let observations = reference.states.iter().map(|u| sys.observe(observable, u)).collect();
    let mut background = u_ref.to_vec();
    if variance > 0.0 {
        let dist = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::Input(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all: Vec<usize> = (0..u_ref.len()).collect();
        for &i in mask.unwrap_or(&all) {
            if i >= u_ref.len() {
                return Err(Error::Input(format!("mask index {i} out of range")));
            }
            background[i] += dist.sample(&mut rng);
        }
    }
    Ok(Twin { reference, observable, observations, background })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssimilationConfig {
    pub parameter: String,
    pub gamma: f64,
    pub iterations: usize,
    /// Assimilation window in time units.
    pub window: f64,
    /// Time units between the start of each run and the start of the
    /// window, for the shadowing basis to align.
    pub spinup: f64,
    /// Stop once the misfit objective falls below this.
    pub tolerance: f64,
    /// Stop after this many consecutive objective increases.
    pub patience: usize,
    pub unstable_dim: usize,
}

impl Default for AssimilationConfig {
    fn default() -> Self {
        AssimilationConfig {
            parameter: "s".into(),
            gamma: 0.1,
            iterations: 200,
            window: 10.0,
            spinup: 2.0,
            tolerance: 1e-12,
            patience: 10,
            unstable_dim: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "detail")]
pub enum StopReason {
    Budget,
    Tolerance,
    Diverging,
    /// The run or the shadowing solve failed at an updated iterate.
    Failed(String),
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalysisResult {
    /// Start of the run with the lowest objective; this is the analysis.
    pub initial_state: Vec<f64>,
    /// State at the start of the assimilation window.
    pub analysis_state: Vec<f64>,
    pub parameter: f64,
    /// `|g_obs - g| / |g_obs|` over the window along the analysis orbit.
    pub relative_error: Vec<f64>,
    /// Same for the unassimilated background orbit.
    pub background_error: Vec<f64>,
    /// Window steps whose denominator was clamped.
    pub clamped: Vec<usize>,
    pub max_error: f64,
    pub mean_error: f64,
    /// Misfit objective before each update.
    pub objective: Vec<f64>,
    /// Index into `objective` of the analysis.
    pub best_iteration: usize,
    pub stop: StopReason,
}

/// Denominators below this fraction of the window-median `|g_obs|` are
/// clamped to it.
pub const CLAMP_FRACTION: f64 = 0.1;

/// Per-step relative errors on window steps `offset..offset+len` and the
/// clamped indices (relative to the window).
pub fn relative_errors(obs: &[f64], model: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut mags: Vec<f64> = obs.iter().map(|x| x.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let floor = CLAMP_FRACTION * mags.get(mags.len() / 2).copied().unwrap_or(0.0);
    let mut clamped = Vec::new();
    let errs = obs
        .iter()
        .zip(model)
        .enumerate()
        .map(|(i, (o, m))| {
            let mut den = o.abs();
            if den < floor || den == 0.0 {
                clamped.push(i);
                den = floor.max(f64::MIN_POSITIVE);
            }
            (o - m).abs() / den
        })
        .collect();
    (errs, clamped)
}

fn misfit<S: DynamicalSystem>(sys: &S, traj: &Trajectory, obs: &[f64], k: usize, offset: usize, len: usize) -> f64 {
    (offset..offset + len).map(|n| (obs[n] - sys.observe(k, &traj.states[n])).powi(2)).sum::<f64>() / len as f64
}

/// Descent on `<J> = (1/N) sum (g_obs_n - g_n)^2` over the window. Each
/// step solves a tangent shadowing problem (no center treatment, so the
/// orbit keeps its timing), moves the parameter by `-gamma d<J>/dS` and the
/// run's initial state by the same amount along `v^sh_0`.
pub fn assimilate<S: DynamicalSystem>(sys: &S, twin: &Twin, config: &AssimilationConfig, seed: u64) -> Result<AnalysisResult> {
    if !(config.gamma > 0.0) {
        return Err(Error::Input(format!("gamma must be positive, got {}", config.gamma)));
    }
    let ip = sys.param_index(&config.parameter)?;
    let k = twin.observable;
    let offset = steps_for(sys, config.spinup);
    let len = steps_for(sys, config.window);
    let total = offset + len;
    if len == 0 || twin.observations.len() < total {
        return Err(Error::Input(format!(
            "twin covers {} states, the run needs {}",
            twin.observations.len(),
            total
        )));
    }
    let obs = &twin.observations;
    let mut p = sys.params().to_vec();
    let mut u0 = twin.background.clone();
    let mut objective = Vec::new();
    let mut best = (f64::INFINITY, 0, p.clone(), u0.clone());
    let mut rising = 0;
    let mut stop = StopReason::Budget;
    for it in 0..config.iterations {
        let step = descent_step(sys, &p, &u0, obs, k, ip, offset, len, config, seed.wrapping_add(it as u64));
        let (j, ds, v0) = match step {
            Ok(x) => x,
            Err(e) => {
                warn!("assimilation stopped at iteration {it}: {e}");
                stop = StopReason::Failed(e.to_string());
                break;
            }
        };
        if objective.last().is_some_and(|&last| j > last) {
            rising += 1;
        } else {
            rising = 0;
        }
        objective.push(j);
        if j < best.0 {
            best = (j, it, p.clone(), u0.clone());
        }
        if j < config.tolerance {
            stop = StopReason::Tolerance;
            break;
        }
        if rising >= config.patience {
            warn!("assimilation stopped after {rising} consecutive objective increases");
            stop = StopReason::Diverging;
            break;
        }
        p[ip] += ds;
        for (x, v) in u0.iter_mut().zip(v0.iter()) {
            *x += ds * v;
        }
    }
    let (_, best_iteration, p, u0) = best;
    let s = sys.with_params(&p)?;
    let traj = orbit(&s, &u0, total)?;
    let model: Vec<f64> = (offset..total).map(|n| s.observe(k, &traj.states[n])).collect();
    let (relative_error, clamped) = relative_errors(&obs[offset..total], &model);
    let bg = orbit(sys, &twin.background, total)?;
    let bg_model: Vec<f64> = (offset..total).map(|n| sys.observe(k, &bg.states[n])).collect();
    let background_error = relative_errors(&obs[offset..total], &bg_model).0;
    let max_error = relative_error.iter().copied().fold(0.0, f64::max);
    let mean_error = relative_error.iter().sum::<f64>() / relative_error.len() as f64;
    Ok(AnalysisResult {
        analysis_state: traj.states[offset].clone(),
        initial_state: u0,
        parameter: p[ip],
        relative_error,
        background_error,
        clamped,
        max_error,
        mean_error,
        objective,
        best_iteration,
        stop,
    })
}

/// Objective at `(p, u0)`, the parameter step and `v^sh_0`.
#[allow(clippy::too_many_arguments)]
fn descent_step<S: DynamicalSystem>(
    sys: &S,
    p: &[f64],
    u0: &[f64],
    obs: &[f64],
    k: usize,
    ip: usize,
    offset: usize,
    len: usize,
    config: &AssimilationConfig,
    seed: u64,
) -> Result<(f64, f64, DVector<f64>)> {
    let s = sys.with_params(p)?;
    let traj = orbit(&s, u0, offset + len)?;
    let j = misfit(&s, &traj, obs, k, offset, len);
    if j < config.tolerance {
        return Ok((j, 0.0, DVector::zeros(u0.len())));
    }
    let steps = AdSteps::new(&s, &traj, Case::Tangent, ip);
    let sol = solve_window(&steps, Case::Tangent, initial_basis(s.dim(), config.unstable_dim, seed)?, false)?;
    let provider = DerivativeProvider::default();
    let mut grad = 0.0;
    for n in offset..offset + len {
        let u = &traj.states[n];
        let (gu, gp) = provider.observable_gradient(&s, k, u, p)?;
        let w = -2.0 * (obs[n] - s.observe(k, u));
        grad += w * (DVector::from_vec(gu).dot(&sol.directions[n]) + gp[ip]);
    }
    grad /= len as f64;
    debug!("objective {j:.6e} gradient {grad:.6e} parameter {}", p[ip]);
    Ok((j, -config.gamma * grad, sol.directions[0].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Lorenz63System;

    #[test]
    fn zero_noise_twin_is_exact() {
        let sys = Lorenz63System::lorenz63(28.0).unwrap();
        let u = crate::dynamics::spin_up(&sys, &[1.0, 1.0, 20.0], 10.0).unwrap();
        let twin = generate_twin(&sys, &u, 400, 2, 0.0, None, 1).unwrap();
        assert_eq!(twin.background, u);
        let cfg = AssimilationConfig { iterations: 3, window: 1.0, spinup: 1.0, tolerance: 0.0, ..Default::default() };
        let res = assimilate(&sys, &twin, &cfg, 1).unwrap();
        assert_eq!(res.objective[0], 0.0);
        assert!((res.parameter - 28.0).abs() < 1e-8);
        assert!(res.initial_state.iter().zip(&u).all(|(a, b)| (a - b).abs() < 1e-8));
        assert!(*res.objective.last().unwrap() <= res.objective[0] + 1e-10);
    }

    #[test]
    fn masked_noise_only_touches_masked_components() {
        let sys = Lorenz63System::lorenz63(28.0).unwrap();
        let twin = generate_twin(&sys, &[1.0, 2.0, 3.0], 10, 2, 0.1, Some(&[2]), 4).unwrap();
        assert_eq!(&twin.background[..2], &[1.0, 2.0]);
        assert_ne!(twin.background[2], 3.0);
    }

    #[test]
    fn clamping_small_denominators() {
        let (e, c) = relative_errors(&[10.0, 10.0, 0.0, 10.0], &[11.0, 10.0, 0.5, 10.0]);
        assert_eq!(c, vec![2]);
        assert!((e[0] - 0.1).abs() < 1e-15);
        assert!((e[2] - 0.5).abs() < 1e-15);
    }
}
