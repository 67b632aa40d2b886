//! Lyapunov exponents by repeated QR and covariant Lyapunov vectors by the
//! Ginelli forward/backward algorithm.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{orbit, DynamicalSystem};
use crate::error::{Error, Result};
use crate::linalg::qr_positive;
use crate::perturbation::{Case, DerivativeProvider, Direction};

/// Exponents with `|lambda|` below this count as zero.
pub const ZERO_EXPONENT_TOL: f64 = 0.02;
/// `R` factors with a condition number above this are flagged.
pub const ILL_CONDITIONED: f64 = 1e12;

/// Random `d x k` matrix with orthonormal columns.
pub fn random_orthonormal(d: usize, k: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(d, k, |_, _| StandardNormal.sample(&mut rng));
    Ok(qr_positive(m)?.0)
}

/// `A Q` (tangent) or `A^T Q` (adjoint) for the Jacobian `A` at `(u, p)`,
/// column by column through the provider.
pub fn propagate<S: DynamicalSystem>(
    sys: &S,
    provider: &DerivativeProvider,
    u: &[f64],
    p: &[f64],
    q: &DMatrix<f64>,
    case: Case,
) -> Result<DMatrix<f64>> {
    let (d, k) = q.shape();
    let cols: Vec<Vec<f64>> = match case {
        Case::Tangent => {
            let dirs: Vec<Direction> = q.column_iter().map(|c| Direction::state(c.iter().copied().collect(), p.len())).collect();
            provider.jvp_many(sys, u, p, &dirs)?
        }
        Case::Adjoint => {
            let zs: Vec<Vec<f64>> = q.column_iter().map(|c| c.iter().copied().collect()).collect();
            provider.vjp_many(sys, u, p, &zs)?.into_iter().map(|(a, _)| a).collect()
        }
    };
    Ok(DMatrix::from_fn(d, k, |i, j| cols[j][i]))
}

#[derive(Clone, Debug, Serialize)]
pub struct LyapunovResult {
    /// Exponents per unit time, largest first.
    pub exponents: Vec<f64>,
    /// Running estimates sampled every `stride` steps as `(time, exponents)`.
    pub running: Vec<(f64, Vec<f64>)>,
    pub steps: usize,
    pub final_state: Vec<f64>,
}

/// Leading `k` exponents over `steps` steps from `u0`, with QR every step.
/// The first `discard` steps align the random initial basis and are not
/// averaged.
pub fn lyapunov_spectrum<S: DynamicalSystem>(
    sys: &S,
    provider: &DerivativeProvider,
    u0: &[f64],
    k: usize,
    steps: usize,
    discard: usize,
    seed: u64,
) -> Result<LyapunovResult> {
    let d = sys.dim();
    if k == 0 || k > d {
        return Err(Error::Input(format!("number of exponents must be in 1..={d}, got {k}")));
    }
    if steps == 0 {
        return Err(Error::Input("Lyapunov spectrum needs at least one step".into()));
    }
    let p = sys.params().to_vec();
    let dt = sys.dt();
    let stride = (steps / 1000).max(1);
    let mut q = random_orthonormal(d, k, seed)?;
    let mut u = u0.to_vec();
    let mut sums = vec![0.0; k];
    let mut running = Vec::new();
    for n in 0..discard + steps {
        let aq = propagate(sys, provider, &u, &p, &q, Case::Tangent)?;
        let (qn, r) = qr_positive(aq)?;
        q = qn;
        u = sys.step_at(&u, &p, n)?;
        if n >= discard {
            for (i, s) in sums.iter_mut().enumerate() {
                *s += r[(i, i)].ln();
            }
            let m = n + 1 - discard;
            if m % stride == 0 {
                let t = m as f64 * dt;
                running.push((t, sums.iter().map(|s| s / t).collect()));
            }
        }
    }
    let total = steps as f64 * dt;
    Ok(LyapunovResult { exponents: sums.iter().map(|s| s / total).collect(), running, steps, final_state: u })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    FixedPoint,
    Periodic,
    Quasiperiodic,
    Chaotic,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::FixedPoint => "fixed-point",
            Regime::Periodic => "periodic",
            Regime::Quasiperiodic => "quasiperiodic",
            Regime::Chaotic => "chaotic",
        })
    }
}

/// Attractor type from the leading exponents.
pub fn classify(exponents: &[f64]) -> Regime {
    if exponents.first().is_some_and(|&l| l > ZERO_EXPONENT_TOL) {
        return Regime::Chaotic;
    }
    match exponents.iter().filter(|l| l.abs() < ZERO_EXPONENT_TOL).count() {
        0 => Regime::FixedPoint,
        1 => Regime::Periodic,
        _ => Regime::Quasiperiodic,
    }
}

/// Covariant Lyapunov vectors over a window of an orbit.
#[derive(Clone, Debug)]
pub struct ClvSet {
    pub case: Case,
    /// `d x k` unit-column matrices, one per window step, in forward time.
    pub vectors: Vec<DMatrix<f64>>,
    /// State index of the first window step along the computed orbit.
    pub offset: usize,
    pub dt: f64,
    /// Exponents from the same forward (or backward) QR sweep.
    pub exponents: Vec<f64>,
    /// Window steps whose `R` factor exceeded [`ILL_CONDITIONED`].
    pub flagged: Vec<usize>,
}

impl ClvSet {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

fn normalize_columns(m: &mut DMatrix<f64>) {
    for mut c in m.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
}

fn condition(r: &DMatrix<f64>) -> f64 {
    let diag: Vec<f64> = (0..r.nrows()).map(|i| r[(i, i)].abs()).collect();
    let hi = diag.iter().cloned().fold(0.0, f64::max);
    let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    hi / lo
}

/// Ginelli's algorithm over `window` steps, with `spin` steps of forward
/// spin-up before and backward spin-down after the window, all discarded.
///
/// The tangent variant pushes bases forward with `D_u f` and runs the
/// coefficient sweep backward. The adjoint variant pushes bases backward in
/// time with `(D_u f)^T` and runs the coefficient sweep forward.
pub fn clv_ginelli<S: DynamicalSystem>(
    sys: &S,
    provider: &DerivativeProvider,
    u0: &[f64],
    k: usize,
    window: usize,
    spin: usize,
    case: Case,
    seed: u64,
) -> Result<ClvSet> {
    let d = sys.dim();
    if k == 0 || k > d {
        return Err(Error::Input(format!("number of CLVs must be in 1..={d}, got {k}")));
    }
    if window == 0 {
        return Err(Error::Input("CLV window must be at least one step".into()));
    }
    let p = sys.params().to_vec();
    let total = window + 2 * spin;
    let traj = orbit(sys, u0, total)?;
    let states = &traj.states;

    // sweep index m runs 0..=total; state index is m (tangent) or total - m (adjoint)
    let state_of = |m: usize| if case == Case::Tangent { m } else { total - m };
    let in_window = |m: usize| {
        let s = state_of(m);
        s >= spin && s < spin + window
    };
    let mut q = random_orthonormal(d, k, seed)?;
    let mut qs: Vec<Option<DMatrix<f64>>> = vec![None; total + 1];
    let mut rs: Vec<DMatrix<f64>> = Vec::with_capacity(total);
    let mut flagged = Vec::new();
    let mut sums = vec![0.0; k];
    if in_window(0) {
        qs[0] = Some(q.clone());
    }
    for m in 0..total {
        let aq = match case {
            Case::Tangent => propagate(sys, provider, &states[m], &p, &q, Case::Tangent)?,
            Case::Adjoint => propagate(sys, provider, &states[total - m - 1], &p, &q, Case::Adjoint)?,
        };
        let (qn, r) = qr_positive(aq)?;
        q = qn;
        if in_window(m + 1) {
            qs[m + 1] = Some(q.clone());
            for (i, s) in sums.iter_mut().enumerate() {
                *s += r[(i, i)].ln();
            }
        }
        if condition(&r) > ILL_CONDITIONED {
            flagged.push(state_of(m + 1));
        }
        rs.push(r);
    }
    if !flagged.is_empty() {
        log::warn!("{} steps with ill-conditioned R factors during the CLV sweep", flagged.len());
    }

    let mut c = DMatrix::<f64>::identity(k, k);
    let mut vectors: Vec<(usize, DMatrix<f64>)> = Vec::with_capacity(window);
    for m in (0..=total).rev() {
        if let Some(qm) = &qs[m] {
            let mut v = qm * &c;
            normalize_columns(&mut v);
            vectors.push((state_of(m), v));
        }
        if m > 0 {
            // C_{m-1} = R_m^{-1} C_m
            c = rs[m - 1]
                .solve_upper_triangular(&c)
                .ok_or_else(|| Error::Singular(format!("R factor at sweep step {m} is singular")))?;
            normalize_columns(&mut c);
        }
    }
    vectors.sort_by_key(|(s, _)| *s);
    let time = window as f64 * sys.dt();
    Ok(ClvSet {
        case,
        vectors: vectors.into_iter().map(|(_, v)| v).collect(),
        offset: spin,
        dt: sys.dt(),
        exponents: sums.iter().map(|s| s / time).collect(),
        flagged,
    })
}

/// Angle in degrees between two lines, in `[0, 90]`.
pub fn line_angle(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot.abs() / (na * nb)).min(1.0).acos().to_degrees()
}

#[derive(Clone, Debug, Serialize)]
pub struct AngleStatistics {
    /// Mean over steps of the angle between vector `i` of the first set and
    /// vector `j` of the second, in degrees.
    pub mean: Vec<Vec<f64>>,
    /// Minimum over steps, in degrees.
    pub min: Vec<Vec<f64>>,
}

impl AngleStatistics {
    /// Smallest instantaneous angle over all pairs `i != j`.
    pub fn min_off_diagonal(&self) -> f64 {
        let mut m = f64::INFINITY;
        for (i, row) in self.min.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                if i != j {
                    m = m.min(x);
                }
            }
        }
        m
    }
}

/// Pairwise angle statistics between two CLV sets over their common steps.
pub fn clv_angle_statistics(a: &ClvSet, b: &ClvSet) -> Result<AngleStatistics> {
    if a.offset != b.offset || a.len() != b.len() || a.is_empty() {
        return Err(Error::Input("CLV sets must cover the same non-empty steps".into()));
    }
    let (ka, kb) = (a.vectors[0].ncols(), b.vectors[0].ncols());
    let mut mean = vec![vec![0.0; kb]; ka];
    let mut min = vec![vec![f64::INFINITY; kb]; ka];
    for (va, vb) in a.vectors.iter().zip(&b.vectors) {
        for i in 0..ka {
            let ci: Vec<f64> = va.column(i).iter().copied().collect();
            for j in 0..kb {
                let cj: Vec<f64> = vb.column(j).iter().copied().collect();
                let t = line_angle(&ci, &cj);
                mean[i][j] += t;
                min[i][j] = f64::min(min[i][j], t);
            }
        }
    }
    let n = a.len() as f64;
    mean.iter_mut().flatten().for_each(|x| *x /= n);
    Ok(AngleStatistics { mean, min })
}

/// Largest angle (radians) between `A c_n^i` and `c_{n+1}^i` over the set,
/// measuring how well the vectors are covariant. `u_window0` is the state
/// at the first window step.
pub fn covariance_residual<S: DynamicalSystem>(
    sys: &S,
    provider: &DerivativeProvider,
    u_window0: &[f64],
    set: &ClvSet,
) -> Result<f64> {
    let p = sys.params().to_vec();
    let mut u = u_window0.to_vec();
    let mut worst = 0.0f64;
    for n in 0..set.len().saturating_sub(1) {
        let (from, to, at) = match set.case {
            Case::Tangent => (&set.vectors[n], &set.vectors[n + 1], Case::Tangent),
            Case::Adjoint => (&set.vectors[n + 1], &set.vectors[n], Case::Adjoint),
        };
        let pushed = propagate(sys, provider, &u, &p, from, at)?;
        for i in 0..from.ncols() {
            let a: Vec<f64> = pushed.column(i).iter().copied().collect();
            let b: Vec<f64> = to.column(i).iter().copied().collect();
            worst = worst.max(line_angle(&a, &b).to_radians());
        }
        u = sys.step_at(&u, &p, n)?;
    }
    Ok(worst)
}
