use nalgebra::{DMatrix, DVector};

use crate::dynamics::{DynamicalSystem, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::qr_positive;
use crate::perturbation::{Case, DerivativeMode, DerivativeProvider, Direction};

/// One step of the linear recursions driving the n-loop:
/// `Q_n = A_{n-1} Q_{n-1}` and `v_n = A_{n-1} v_{n-1} + b_n`, `n = 1..=N`.
pub trait LinearizedSteps {
    fn dim(&self) -> usize;
    fn steps(&self) -> usize;
    /// `(A_{n-1} Q, A_{n-1} v + b_n)`.
    fn advance(&self, n: usize, q: &DMatrix<f64>, v: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)>;
    /// Approximate center direction `F_n`, `n = 1..=N`.
    fn center(&self, _n: usize) -> Option<DVector<f64>> {
        None
    }
}

/// Explicit `A_n`, `b_n` sequences: `a[n-1] = A_{n-1}`, `b[n-1] = b_n`,
/// `f[n-1] = F_n`.
#[derive(Clone, Debug)]
pub struct MatrixSteps {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
    pub f: Option<Vec<DVector<f64>>>,
}

impl MatrixSteps {
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DVector<f64>>, f: Option<Vec<DVector<f64>>>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Dimension { expected: a.len(), got: b.len() });
        }
        let d = b.first().map_or(0, |x| x.len());
        for (m, x) in a.iter().zip(&b) {
            if m.shape() != (d, d) || x.len() != d {
                return Err(Error::Dimension { expected: d, got: x.len() });
            }
        }
        if let Some(f) = &f {
            if f.len() != a.len() || f.iter().any(|x| x.len() != d) {
                return Err(Error::Input("center directions must match the step sequence".into()));
            }
        }
        Ok(MatrixSteps { a, b, f })
    }

    /// Jacobian matrices along `traj` from `provider`, for the tangent case
    /// (`b_n = D_S f(u_{n-1}) e_param`) or the adjoint case (time-reversed
    /// transposes, `b_m = DJ(u_{N-m})`). `target` is the parameter index
    /// in the tangent case and the observable index in the adjoint case.
    pub fn along<S: DynamicalSystem>(
        sys: &S,
        provider: &DerivativeProvider,
        traj: &Trajectory,
        case: Case,
        target: usize,
    ) -> Result<Self> {
        let n = traj.len() - 1;
        let p = &traj.params;
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut f = Vec::with_capacity(n);
        for step in 1..=n {
            let (prev, here) = match case {
                Case::Tangent => (step - 1, step),
                Case::Adjoint => (n - step, n - step),
            };
            let (ju, jp) = provider.jacobians(sys, &traj.states[prev], p)?;
            match case {
                Case::Tangent => {
                    a.push(ju);
                    b.push(jp.column(target).into_owned());
                }
                Case::Adjoint => {
                    a.push(ju.transpose());
                    b.push(DVector::from_vec(provider.observable_gradient(sys, target, &traj.states[here], p)?.0));
                }
            }
            if let Some(x) = sys.vector_field(&traj.states[here]) {
                f.push(DVector::from_vec(x));
            }
        }
        let f = (f.len() == n && n > 0).then_some(f);
        MatrixSteps::new(a, b, f)
    }
}

impl LinearizedSteps for MatrixSteps {
    fn dim(&self) -> usize {
        self.b.first().map_or(0, |x| x.len())
    }
    fn steps(&self) -> usize {
        self.a.len()
    }
    fn advance(&self, n: usize, q: &DMatrix<f64>, v: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let a = &self.a[n - 1];
        Ok((a * q, a * v + &self.b[n - 1]))
    }
    fn center(&self, n: usize) -> Option<DVector<f64>> {
        self.f.as_ref().map(|f| f[n - 1].clone())
    }
}

/// Matrix-free steps: products with the Jacobian come straight from the
/// dual-number step map (tangent) or the taped step map (adjoint).
pub struct AdSteps<'a, S> {
    sys: &'a S,
    traj: &'a Trajectory,
    case: Case,
    target: usize,
    provider: DerivativeProvider,
}

impl<'a, S: DynamicalSystem> AdSteps<'a, S> {
    /// `target` as in [`MatrixSteps::along`].
    pub fn new(sys: &'a S, traj: &'a Trajectory, case: Case, target: usize) -> Self {
        let mode = match case {
            Case::Tangent => DerivativeMode::AdForward,
            Case::Adjoint => DerivativeMode::AdReverse,
        };
        AdSteps { sys, traj, case, target, provider: DerivativeProvider::new(mode) }
    }

    fn primal(&self, n: usize) -> (usize, usize) {
        let last = self.traj.len() - 1;
        match self.case {
            Case::Tangent => (n - 1, n),
            Case::Adjoint => (last - n, last - n),
        }
    }
}

impl<S: DynamicalSystem> LinearizedSteps for AdSteps<'_, S> {
    fn dim(&self) -> usize {
        self.sys.dim()
    }
    fn steps(&self) -> usize {
        self.traj.len() - 1
    }
    fn advance(&self, n: usize, q: &DMatrix<f64>, v: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let (prev, here) = self.primal(n);
        let u = &self.traj.states[prev];
        let p = &self.traj.params;
        let (d, k) = q.shape();
        let cols: Vec<Vec<f64>> = q.column_iter().map(|c| c.iter().copied().collect()).collect();
        let mut out = match self.case {
            Case::Tangent => {
                let mut dirs: Vec<Direction> = cols.into_iter().map(|c| Direction::state(c, p.len())).collect();
                let mut dp = vec![0.0; p.len()];
                dp[self.target] = 1.0;
                dirs.push(Direction { du: v.as_slice().to_vec(), dp });
                self.provider.jvp_many(self.sys, u, p, &dirs)?
            }
            Case::Adjoint => {
                let mut zs = cols;
                zs.push(v.as_slice().to_vec());
                let mut out: Vec<Vec<f64>> =
                    self.provider.vjp_many(self.sys, u, p, &zs)?.into_iter().map(|(a, _)| a).collect();
                let g = self.provider.observable_gradient(self.sys, self.target, &self.traj.states[here], p)?.0;
                let last = out.last_mut().expect("inhomogeneous column");
                for (x, gi) in last.iter_mut().zip(g) {
                    *x += gi;
                }
                out
            }
        };
        let vn = DVector::from_vec(out.pop().expect("inhomogeneous column"));
        Ok((DMatrix::from_fn(d, k, |i, j| out[j][i]), vn))
    }
    fn center(&self, n: usize) -> Option<DVector<f64>> {
        self.sys.vector_field(&self.traj.states[self.primal(n).1]).map(DVector::from_vec)
    }
}

/// Projections on the center direction recorded by the n-loop. Index `n`
/// runs over `0..=N`; entry 0 is zero.
#[derive(Clone, Debug, Default)]
pub struct CenterData {
    pub norm2: Vec<f64>,
    /// `F_n^T (A_{n-1} v_{n-1} + b_n)` before any projection.
    pub v_raw: Vec<f64>,
    /// `(A_{n-1} Q_{n-1})^T F_n` before any projection.
    pub q_raw: Vec<DVector<f64>>,
    /// `F_n^T v_n` after the loop step.
    pub v_post: Vec<f64>,
    /// `Q_n^T F_n` after the loop step.
    pub q_post: Vec<DVector<f64>>,
    /// Whether `F_n` was projected out of `Q_n` and `v_n`.
    pub projected: bool,
}

/// Output of the n-loop. `q`, `v` run over `n = 0..=N`; `r`, `pi` over
/// `n = 1..=N` stored at `n - 1`.
#[derive(Clone, Debug)]
pub struct PerturbationSequence {
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub v: Vec<DVector<f64>>,
    pub pi: Vec<DVector<f64>>,
    pub center: Option<CenterData>,
}

impl PerturbationSequence {
    pub fn steps(&self) -> usize {
        self.r.len()
    }

    /// Exponents per unit time from `diag(R_n)` over steps `from..=N`.
    pub fn exponents(&self, dt: f64, from: usize) -> Vec<f64> {
        let k = self.q[0].ncols();
        let from = from.max(1);
        let rs = &self.r[from - 1..];
        let t = rs.len() as f64 * dt;
        (0..k).map(|i| rs.iter().map(|r| r[(i, i)].ln()).sum::<f64>() / t).collect()
    }
}

/// Orthonormalized homogeneous and projected inhomogeneous perturbations.
/// With `project_center`, `F_n` is removed from `Q_n` before the QR and
/// from `v_n` before the unstable projection.
pub fn n_loop<L: LinearizedSteps>(steps: &L, q0: DMatrix<f64>, project_center: bool) -> Result<PerturbationSequence> {
    let d = steps.dim();
    let nsteps = steps.steps();
    if q0.nrows() != d {
        return Err(Error::Dimension { expected: d, got: q0.nrows() });
    }
    if q0.ncols() == 0 || q0.ncols() > d {
        return Err(Error::Input(format!("unstable dimension must be in 1..={d}, got {}", q0.ncols())));
    }
    let k = q0.ncols();
    let mut q = vec![q0];
    let mut r = Vec::with_capacity(nsteps);
    let mut v = vec![DVector::zeros(d)];
    let mut pi = Vec::with_capacity(nsteps);
    let mut center = steps.center(1).map(|_| CenterData {
        norm2: vec![0.0],
        v_raw: vec![0.0],
        q_raw: vec![DVector::zeros(k)],
        v_post: vec![0.0],
        q_post: vec![DVector::zeros(k)],
        projected: project_center,
    });
    for n in 1..=nsteps {
        let (mut qt, mut vt) = steps.advance(n, &q[n - 1], &v[n - 1])?;
        if qt.iter().chain(vt.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(n));
        }
        let f = match center.as_ref() {
            Some(_) => Some(steps.center(n).ok_or_else(|| Error::Input(format!("center direction missing at step {n}")))?),
            None => None,
        };
        if let (Some(c), Some(f)) = (center.as_mut(), f.as_ref()) {
            let f2 = f.norm_squared();
            c.norm2.push(f2);
            c.v_raw.push(f.dot(&vt));
            c.q_raw.push(qt.tr_mul(f));
            if project_center && f2 > 0.0 {
                let fq = qt.tr_mul(f) / f2;
                qt -= f * fq.transpose();
                vt -= f * (f.dot(&vt) / f2);
            }
        }
        let (qn, rn) = qr_positive(qt).map_err(|e| match e {
            Error::DegenerateBasis { index, value } => {
                Error::Singular(format!("QR degeneracy at step {n}: pivot {index} is {value:e}"))
            }
            e => e,
        })?;
        let p = qn.tr_mul(&vt);
        vt -= &qn * &p;
        if let (Some(c), Some(f)) = (center.as_mut(), f.as_ref()) {
            c.v_post.push(f.dot(&vt));
            c.q_post.push(qn.tr_mul(f));
        }
        q.push(qn);
        r.push(rn);
        v.push(vt);
        pi.push(p);
    }
    Ok(PerturbationSequence { q, r, v, pi, center })
}
