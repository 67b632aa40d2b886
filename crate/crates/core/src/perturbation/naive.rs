use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{orbit, DynamicalSystem};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::perturbation::{DerivativeMode, DerivativeProvider, Direction};

/// Direction of derivative propagation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Case {
    Tangent,
    Adjoint,
}

fn unit(d: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[k] = 1.0;
    e
}

/// `d<J>_N / dS_k` of the finite-time average along the orbit from `u0`,
/// by the plain tangent or adjoint recursion. Grows exponentially with `N`
/// on chaotic orbits.
pub fn finite_time_sensitivity<S: DynamicalSystem>(
    sys: &S,
    provider: &DerivativeProvider,
    u0: &[f64],
    param: usize,
    observable: usize,
    steps: usize,
    case: Case,
) -> Result<f64> {
    if steps == 0 {
        return Err(Error::Input("finite-time sensitivity needs N >= 1".into()));
    }
    let np = sys.param_names().len();
    if param >= np {
        return Err(Error::Input(format!("parameter index {param} out of range")));
    }
    let p = sys.params().to_vec();
    let inv_n = 1.0 / steps as f64;
    let d = sys.dim();
    match case {
        Case::Tangent => {
            let mut u = u0.to_vec();
            let mut v = vec![0.0; d];
            let mut sum = 0.0;
            for n in 0..steps {
                let (gu, gp) = provider.observable_gradient(sys, observable, &u, &p)?;
                sum += dot(&gu, &v) + gp[param];
                v = provider.jvp(sys, &u, &p, &v, &unit(np, param))?;
                u = sys.step_at(&u, &p, n)?;
            }
            Ok(sum * inv_n)
        }
        Case::Adjoint => {
            let traj = orbit(sys, u0, steps - 1)?;
            let states = &traj.states;
            let mut direct = 0.0;
            let mut grads = Vec::with_capacity(steps);
            for u in states {
                let (gu, gp) = provider.observable_gradient(sys, observable, u, &p)?;
                direct += gp[param];
                grads.push(gu);
            }
            let mut lam: Vec<f64> = grads[steps - 1].iter().map(|g| g * inv_n).collect();
            let mut sum = 0.0;
            for n in (1..steps).rev() {
                let (su, sp) = provider.vjp(sys, &states[n - 1], &p, &lam)?;
                sum += sp[param];
                lam = su.iter().zip(&grads[n - 1]).map(|(a, g)| a + g * inv_n).collect();
            }
            Ok(sum + direct * inv_n)
        }
    }
}

/// Norm histories of a single perturbation under the different propagation
/// methods. Index `n` is the forward step for every series except `adjoint`
/// and `ad_reverse`, which are indexed by steps before the horizon.
#[derive(Clone, Debug, Serialize)]
pub struct GrowthSeries {
    pub dt: f64,
    pub tangent: Vec<f64>,
    pub adjoint: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub ad_forward: Vec<f64>,
    pub ad_reverse: Vec<f64>,
}

/// Growth of a unit perturbation over `steps` steps from `u0`: homogeneous
/// tangent and adjoint recursions with finite-difference Jacobian matrices,
/// the difference of two primal orbits started `eps` apart (divided by
/// `eps`), and the dual-number and taped step maps.
pub fn perturbation_growth<S: DynamicalSystem>(
    sys: &S,
    u0: &[f64],
    steps: usize,
    eps: f64,
    seed: u64,
) -> Result<GrowthSeries> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Input(format!("perturbation size must be positive, got {eps}")));
    }
    let d = sys.dim();
    let p = sys.params().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q0: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n0 = norm(&q0);
    q0.iter_mut().for_each(|x| *x /= n0);

    let traj = orbit(sys, u0, steps)?;
    let states = &traj.states;
    let fd = DerivativeProvider::default_fd();
    let fwd = DerivativeProvider::new(DerivativeMode::AdForward);
    let rev = DerivativeProvider::new(DerivativeMode::AdReverse);

    let mut tangent = vec![1.0];
    let mut ad_forward = vec![1.0];
    let mut finite_difference = vec![1.0];
    let mut q = DVector::from_vec(q0.clone());
    let mut w = q0.clone();
    let mut shadow: Vec<f64> = u0.iter().zip(&q0).map(|(x, e)| x + eps * e).collect();
    for n in 0..steps {
        let u = &states[n];
        q = fd.jacobian(sys, u, &p)? * q;
        tangent.push(q.norm());
        w = fwd.jvp_many(sys, u, &p, &[Direction::state(w, p.len())])?.pop().expect("one product");
        ad_forward.push(norm(&w));
        shadow = sys.step_at(&shadow, &p, n)?;
        finite_difference.push(norm(&shadow.iter().zip(&states[n + 1]).map(|(a, b)| a - b).collect::<Vec<_>>()) / eps);
    }

    let mut adjoint = vec![1.0];
    let mut ad_reverse = vec![1.0];
    let mut z = DVector::from_vec(q0.clone());
    let mut y = q0;
    for n in (0..steps).rev() {
        let u = &states[n];
        z = fd.jacobian(sys, u, &p)?.tr_mul(&z);
        adjoint.push(z.norm());
        y = rev.vjp(sys, u, &p, &y)?.0;
        ad_reverse.push(norm(&y));
    }
    Ok(GrowthSeries { dt: sys.dt(), tangent, adjoint, finite_difference, ad_forward, ad_reverse })
}

impl DerivativeProvider {
    fn default_fd() -> Self {
        DerivativeProvider { mode: DerivativeMode::FiniteDifference, ..Default::default() }
    }
}

/// Least-squares slope of `ln(series)` per unit time over `[from, to)`.
pub fn log_slope(series: &[f64], dt: f64, from: usize, to: usize) -> f64 {
    let to = to.min(series.len());
    let pts: Vec<(f64, f64)> =
        (from..to).filter(|&i| series[i] > 0.0).map(|i| (i as f64 * dt, series[i].ln())).collect();
    let n = pts.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
