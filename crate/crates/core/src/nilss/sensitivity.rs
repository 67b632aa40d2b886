use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{orbit, spin_up, steps_for, DynamicalSystem, Trajectory};
use crate::error::{Error, Result};
use crate::lyapunov::random_orthonormal;
use crate::perturbation::{Case, DerivativeProvider};
use crate::nilss::lsq::{constraint_residual, min_norm_coefficients, CenterRow, Coefficients};
use crate::nilss::nloop::{n_loop, AdSteps, LinearizedSteps, MatrixSteps, PerturbationSequence};

/// How the n-loop obtains Jacobian products.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Linearization {
    /// Dual numbers (tangent) or the tape (adjoint) on the step map.
    Ad,
    /// Explicit Jacobian matrices from the configured provider.
    Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShadowingOptions {
    /// Number of homogeneous perturbations `d_u`.
    pub unstable_dim: usize,
    /// Tangent: project out `F` and add the time-dilation term.
    /// Adjoint: append the center row to the least squares.
    pub center: bool,
    /// Time units at the start of each window left out of the sums. `None`
    /// uses `ceil(1 / lambda_1)` with `lambda_1` estimated in the window.
    pub spinup: Option<f64>,
    pub linearization: Linearization,
    /// Jacobians in matrix mode and observable gradients.
    pub provider: DerivativeProvider,
}

impl Default for ShadowingOptions {
    fn default() -> Self {
        ShadowingOptions {
            unstable_dim: 2,
            center: true,
            spinup: None,
            linearization: Linearization::Ad,
            provider: DerivativeProvider::default(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Diagnostics {
    /// `|G X - H| / |H|`, including the center row.
    pub residual: f64,
    /// Largest `|a_n - R_n a_{n-1} - pi_n|`, relative to the size of `a` and `pi`.
    pub constraint_residual: f64,
    pub condition: f64,
    pub max_norm: f64,
    pub median_norm: f64,
    /// Loop steps left out of the sums.
    pub spinup_steps: usize,
    pub warnings: Vec<String>,
}

/// Solved shadowing problem for one window.
#[derive(Clone, Debug)]
pub struct ShadowingSolution {
    pub case: Case,
    pub sequence: PerturbationSequence,
    pub coefficients: Coefficients,
    /// `v^sh_n = v_n + Q_n a_n`, `n = 0..=N` in loop order.
    pub directions: Vec<DVector<f64>>,
    pub diagnostics: Diagnostics,
}

/// `Q_0` for a given seed.
pub fn initial_basis(d: usize, k: usize, seed: u64) -> Result<DMatrix<f64>> {
    random_orthonormal(d, k, seed)
}

/// n-loop followed by the minimum-norm solve. With `center_row` the sum of
/// `F_n^T v^sh_n` over the loop is constrained to zero (adjoint case).
pub fn solve_window<L: LinearizedSteps>(
    steps: &L,
    case: Case,
    q0: DMatrix<f64>,
    center: bool,
) -> Result<ShadowingSolution> {
    let project = center && case == Case::Tangent;
    let seq = n_loop(steps, q0, project)?;
    let row = match (center && case == Case::Adjoint, seq.center.as_ref()) {
        (true, Some(c)) => Some(CenterRow { c: c.q_post[1..].to_vec(), rhs: -c.v_post[1..].iter().sum::<f64>() }),
        (true, None) => return Err(Error::Input("center row requested but the system has no vector field".into())),
        _ => None,
    };
    let coefficients = min_norm_coefficients(&seq.r, &seq.pi, row.as_ref())?;
    let a = &coefficients.a;
    let directions: Vec<DVector<f64>> = seq.v.iter().zip(&seq.q).zip(a).map(|((v, q), a)| v + q * a).collect();

    let mut res2 = 0.0;
    let mut h2 = 0.0;
    for i in 0..seq.r.len() {
        res2 += (&a[i + 1] - &seq.r[i] * &a[i] - &seq.pi[i]).norm_squared();
        h2 += seq.pi[i].norm_squared();
    }
    if let Some(row) = &row {
        let lhs: f64 = row.c.iter().zip(&a[1..]).map(|(c, a)| c.dot(a)).sum();
        res2 += (lhs - row.rhs).powi(2);
        h2 += row.rhs * row.rhs;
    }
    let mut norms: Vec<f64> = directions.iter().map(|v| v.norm()).collect();
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    norms.sort_by(f64::total_cmp);
    let diagnostics = Diagnostics {
        residual: if h2 > 0.0 { (res2 / h2).sqrt() } else { res2.sqrt() },
        constraint_residual: constraint_residual(&seq.r, &seq.pi, a),
        condition: coefficients.condition,
        max_norm,
        median_norm: norms[norms.len() / 2],
        spinup_steps: 0,
        warnings: coefficients.warnings.clone(),
    };
    Ok(ShadowingSolution { case, sequence: seq, coefficients, directions, diagnostics })
}

/// Time-dilation rate `eta_n = F_n^T (A v^sh_{n-1} + b_n) / (|F_n|^2 dt)`:
/// the center component removed at step `n`, per unit time. Zero without
/// center projection.
pub fn time_dilation(sol: &ShadowingSolution, dt: f64) -> Vec<f64> {
    let n = sol.sequence.steps();
    match sol.sequence.center.as_ref() {
        Some(c) if c.projected => (0..=n)
            .map(|i| {
                if i == 0 || c.norm2[i] == 0.0 {
                    0.0
                } else {
                    (c.v_raw[i] + c.q_raw[i].dot(&sol.coefficients.a[i - 1])) / (c.norm2[i] * dt)
                }
            })
            .collect(),
        _ => vec![0.0; n + 1],
    }
}

/// `(1/M) sum (x*_n . v^sh_n - eta_n (J_n - <J>))` over aligned samples,
/// with `<J>` their mean.
pub fn tangent_sensitivity(vsh: &[DVector<f64>], x_star: &[DVector<f64>], j: &[f64], eta: &[f64]) -> f64 {
    let m = vsh.len() as f64;
    let mean = j.iter().sum::<f64>() / m;
    vsh.iter().zip(x_star).zip(j).zip(eta).map(|(((v, x), jn), e)| x.dot(v) - e * (jn - mean)).sum::<f64>() / m
}

/// `(1/M) sum v^sh_n . x_n` over aligned samples.
pub fn adjoint_sensitivity(vsh: &[DVector<f64>], x: &[DVector<f64>]) -> f64 {
    vsh.iter().zip(x).map(|(v, x)| v.dot(x)).sum::<f64>() / vsh.len() as f64
}

/// Sensitivities from one window.
#[derive(Clone, Debug, Serialize)]
pub struct WindowSensitivity {
    /// `values[i][j] = d<J_j>/dS_i` for the requested parameters and observables.
    pub values: Vec<Vec<f64>>,
    /// Leading exponents estimated from `diag(R_n)` of the first n-loop.
    pub exponents: Vec<f64>,
    pub diagnostics: Vec<Diagnostics>,
    /// Tangent case: the state and `v^sh` at the first step after spin-up,
    /// per parameter.
    pub start: Option<(Vec<f64>, Vec<Vec<f64>>)>,
}

fn spinup_steps(opts: &ShadowingOptions, sys: &impl DynamicalSystem, seq: &PerturbationSequence, n: usize) -> usize {
    let t = match opts.spinup {
        Some(t) => t,
        None => {
            let l1 = seq.exponents(sys.dt(), 1)[0];
            if l1 > 0.0 { (1.0 / l1).ceil() } else { f64::INFINITY }
        }
    };
    steps_for(sys, t.min(0.5 * n as f64 * sys.dt()))
}

fn build_steps<'a, S: DynamicalSystem>(
    sys: &'a S,
    traj: &'a Trajectory,
    case: Case,
    target: usize,
    opts: &ShadowingOptions,
) -> Result<Either<'a, S>> {
    Ok(match opts.linearization {
        Linearization::Ad => Either::Ad(AdSteps::new(sys, traj, case, target)),
        Linearization::Matrix => Either::Matrix(MatrixSteps::along(sys, &opts.provider, traj, case, target)?),
    })
}

enum Either<'a, S> {
    Ad(AdSteps<'a, S>),
    Matrix(MatrixSteps),
}

impl<S: DynamicalSystem> Either<'_, S> {
    fn solve(&self, case: Case, q0: DMatrix<f64>, center: bool) -> Result<ShadowingSolution> {
        match self {
            Either::Ad(s) => solve_window(s, case, q0, center),
            Either::Matrix(s) => solve_window(s, case, q0, center),
        }
    }
}

fn check_indices<S: DynamicalSystem>(sys: &S, params: &[usize], observables: &[usize]) -> Result<()> {
    if params.is_empty() || observables.is_empty() {
        return Err(Error::Input("need at least one parameter and one observable".into()));
    }
    if let Some(&p) = params.iter().find(|&&p| p >= sys.param_names().len()) {
        return Err(Error::Input(format!("parameter index {p} out of range")));
    }
    if let Some(&k) = observables.iter().find(|&&k| k >= sys.observable_names().len()) {
        return Err(Error::Input(format!("observable index {k} out of range")));
    }
    Ok(())
}

/// Shadowing sensitivities over the `N`-step window starting at `u0`.
/// The tangent case runs one n-loop per parameter and covers every
/// observable; the adjoint case runs one per observable and covers every
/// parameter.
#[allow(clippy::too_many_arguments)]
pub fn window_sensitivity<S: DynamicalSystem>(
    sys: &S,
    u0: &[f64],
    steps: usize,
    case: Case,
    params: &[usize],
    observables: &[usize],
    opts: &ShadowingOptions,
    seed: u64,
) -> Result<WindowSensitivity> {
    check_indices(sys, params, observables)?;
    if steps < 2 {
        return Err(Error::Input("shadowing window needs at least 2 steps".into()));
    }
    let traj = orbit(sys, u0, steps)?;
    let p = sys.params();
    let dt = sys.dt();
    let q0 = initial_basis(sys.dim(), opts.unstable_dim, seed)?;
    let mut values = vec![vec![0.0; observables.len()]; params.len()];
    let mut diagnostics = Vec::new();
    let mut exponents = Vec::new();
    let mut start = None;
    match case {
        Case::Tangent => {
            let mut start_dirs = Vec::new();
            let mut grads: Option<Vec<Vec<(Vec<f64>, Vec<f64>)>>> = None;
            for (ip, &param) in params.iter().enumerate() {
                let sol = build_steps(sys, &traj, case, param, opts)?.solve(case, q0.clone(), opts.center)?;
                let n0 = spinup_steps(opts, sys, &sol.sequence, steps).max(1);
                if ip == 0 {
                    exponents = sol.sequence.exponents(dt, 1);
                }
                let eta = time_dilation(&sol, dt);
                let g = match &grads {
                    Some(g) => g,
                    None => {
                        let g = observables
                            .iter()
                            .map(|&k| {
                                (n0..=steps)
                                    .map(|n| opts.provider.observable_gradient(sys, k, &traj.states[n], p))
                                    .collect::<Result<Vec<_>>>()
                            })
                            .collect::<Result<Vec<_>>>()?;
                        grads.insert(g)
                    }
                };
                let vsh = &sol.directions[n0..];
                for (io, &k) in observables.iter().enumerate() {
                    let xs: Vec<DVector<f64>> = g[io].iter().map(|(gu, _)| DVector::from_column_slice(gu)).collect();
                    let j: Vec<f64> = (n0..=steps).map(|n| sys.observe(k, &traj.states[n])).collect();
                    let direct = g[io].iter().map(|(_, gp)| gp[param]).sum::<f64>() / xs.len() as f64;
                    values[ip][io] = tangent_sensitivity(vsh, &xs, &j, &eta[n0..]) + direct;
                }
                start_dirs.push(sol.directions[n0].as_slice().to_vec());
                let mut diag = sol.diagnostics;
                diag.spinup_steps = n0;
                diagnostics.push(diag);
                if ip == 0 {
                    start = Some((traj.states[n0].clone(), Vec::new()));
                }
            }
            if let Some(s) = start.as_mut() {
                s.1 = start_dirs;
            }
        }
        Case::Adjoint => {
            let rev = DerivativeProvider::new(crate::perturbation::DerivativeMode::AdReverse);
            for (io, &k) in observables.iter().enumerate() {
                let sol = build_steps(sys, &traj, case, k, opts)?.solve(case, q0.clone(), opts.center)?;
                let m0 = spinup_steps(opts, sys, &sol.sequence, steps).max(1);
                if io == 0 {
                    exponents = sol.sequence.exponents(dt, 1);
                }
                // loop step m sits at primal time N - m; its forcing x_{N-m}
                // comes from u_{N-m-1}
                let ms: Vec<usize> = (m0..steps).collect();
                let mut sums = vec![0.0; params.len()];
                let mut direct = vec![0.0; params.len()];
                for &m in &ms {
                    let (_, sp) = rev.vjp(sys, &traj.states[steps - m - 1], p, sol.directions[m].as_slice())?;
                    let (_, gp) = opts.provider.observable_gradient(sys, k, &traj.states[steps - m], p)?;
                    for (ip, &param) in params.iter().enumerate() {
                        sums[ip] += sp[param];
                        direct[ip] += gp[param];
                    }
                }
                let cnt = ms.len() as f64;
                for ip in 0..params.len() {
                    values[ip][io] = (sums[ip] + direct[ip]) / cnt;
                }
                let mut diag = sol.diagnostics;
                diag.spinup_steps = m0;
                diagnostics.push(diag);
            }
        }
    }
    Ok(WindowSensitivity { values, exponents, diagnostics, start })
}

/// Where the sample windows start.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum WindowStarts {
    /// Consecutive segments of one long orbit.
    Consecutive,
    /// Seeded perturbation of the initial state followed by `runup` time units.
    Independent { spread: f64, runup: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerOptions {
    /// Window length in time units.
    pub window: f64,
    pub samples: usize,
    /// Time units integrated from the initial state before the first window.
    pub runup: f64,
    pub starts: WindowStarts,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions { window: 20.0, samples: 100, runup: 100.0, starts: WindowStarts::Consecutive }
    }
}

/// Sample-averaged sensitivities.
#[derive(Clone, Debug, Serialize)]
pub struct SensitivityEstimate {
    pub case: Case,
    pub params: Vec<String>,
    pub observables: Vec<String>,
    /// `samples[w][i][j]` for window `w`.
    pub samples: Vec<Vec<Vec<f64>>>,
    pub mean: Vec<Vec<f64>>,
    pub std_error: Vec<Vec<f64>>,
    /// Running mean after each window, `cumulative[w][i][j]`.
    pub cumulative: Vec<Vec<Vec<f64>>>,
    pub exponents: Vec<Vec<f64>>,
    pub diagnostics: Vec<Vec<Diagnostics>>,
    pub warnings: Vec<String>,
}

/// Initial states of the sample windows.
pub fn window_starts<S: DynamicalSystem>(sys: &S, u0: &[f64], sampler: &SamplerOptions, seed: u64) -> Result<Vec<Vec<f64>>> {
    let n = steps_for(sys, sampler.window);
    let first = spin_up(sys, u0, sampler.runup)?;
    match sampler.starts {
        WindowStarts::Consecutive => {
            let mut starts = Vec::with_capacity(sampler.samples);
            let mut u = first;
            for _ in 0..sampler.samples {
                let next = orbit(sys, &u, n)?.last().to_vec();
                starts.push(std::mem::replace(&mut u, next));
            }
            Ok(starts)
        }
        WindowStarts::Independent { spread, runup } => {
            let dist = Normal::new(0.0, spread).map_err(|e| Error::Input(format!("start spread: {e}")))?;
            (0..sampler.samples)
                .into_par_iter()
                .map(|w| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (w as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    let u: Vec<f64> = first.iter().map(|x| x + dist.sample(&mut rng)).collect();
                    spin_up(sys, &u, runup)
                })
                .collect()
        }
    }
}

/// Repeat the shadowing problem over `samples` windows and average. Windows
/// run in parallel on the current rayon pool and are combined in order.
#[allow(clippy::too_many_arguments)]
pub fn shadowing_sensitivity<S: DynamicalSystem>(
    sys: &S,
    u0: &[f64],
    case: Case,
    params: &[usize],
    observables: &[usize],
    opts: &ShadowingOptions,
    sampler: &SamplerOptions,
    seed: u64,
) -> Result<SensitivityEstimate> {
    check_indices(sys, params, observables)?;
    if sampler.samples == 0 {
        return Err(Error::Input("need at least one sample window".into()));
    }
    let n = steps_for(sys, sampler.window);
    let starts = window_starts(sys, u0, sampler, seed)?;
    let windows: Vec<WindowSensitivity> = starts
        .par_iter()
        .enumerate()
        .map(|(w, u)| window_sensitivity(sys, u, n, case, params, observables, opts, seed.wrapping_add(w as u64)))
        .collect::<Result<_>>()?;

    let (np, no) = (params.len(), observables.len());
    let m = windows.len();
    let mut mean = vec![vec![0.0; no]; np];
    let mut cumulative = Vec::with_capacity(m);
    for (w, win) in windows.iter().enumerate() {
        for i in 0..np {
            for j in 0..no {
                mean[i][j] += (win.values[i][j] - mean[i][j]) / (w + 1) as f64;
            }
        }
        cumulative.push(mean.clone());
    }
    let std_error = (0..np)
        .map(|i| {
            (0..no)
                .map(|j| {
                    if m < 2 {
                        return 0.0;
                    }
                    let var = windows.iter().map(|w| (w.values[i][j] - mean[i][j]).powi(2)).sum::<f64>() / (m - 1) as f64;
                    (var / m as f64).sqrt()
                })
                .collect()
        })
        .collect();
    let mut warnings = Vec::new();
    for (w, win) in windows.iter().enumerate() {
        for d in &win.diagnostics {
            warnings.extend(d.warnings.iter().map(|s| format!("window {w}: {s}")));
        }
    }
    Ok(SensitivityEstimate {
        case,
        params: params.iter().map(|&i| sys.param_names()[i].to_string()).collect(),
        observables: observables.iter().map(|&k| sys.observable_names()[k].to_string()).collect(),
        mean,
        std_error,
        cumulative,
        exponents: windows.iter().map(|w| w.exponents.clone()).collect(),
        diagnostics: windows.iter().map(|w| w.diagnostics.clone()).collect(),
        samples: windows.into_iter().map(|w| w.values).collect(),
        warnings,
    })
}
