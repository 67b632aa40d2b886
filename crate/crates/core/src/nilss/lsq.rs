use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::BlockTridiagonal;

/// Condition estimates of `G G^T` above this produce a warning.
pub const CONDITION_WARNING: f64 = 1e12;

/// Extra equation `sum_n c_n^T a_n = rhs` over `n = 1..=N`.
#[derive(Clone, Debug)]
pub struct CenterRow {
    /// `c[n-1] = c_n`.
    pub c: Vec<DVector<f64>>,
    pub rhs: f64,
}

/// Minimum-norm solution `X = [a_0 .. a_N]` of `a_n = R_n a_{n-1} + pi_n`
/// (plus the optional center row).
#[derive(Clone, Debug)]
pub struct Coefficients {
    /// `a_0 .. a_N`.
    pub a: Vec<DVector<f64>>,
    /// Multipliers with `X = G^T Y (+ c y_c)`; `y[n-1]` pairs with row block `n`.
    pub y: Vec<DVector<f64>>,
    pub y_center: Option<f64>,
    /// Squared pivot-ratio estimate of the condition number of `G G^T`.
    pub condition: f64,
    pub warnings: Vec<String>,
}

/// `X = G^T (G G^T)^{-1} H` with `G` the block bidiagonal `[-R_n, I]` and
/// `H = [pi_1 .. pi_N]`. `G G^T` is block tridiagonal and factored in
/// `O(N d_u^3)`; a center row is eliminated by a Schur complement.
pub fn min_norm_coefficients(r: &[DMatrix<f64>], pi: &[DVector<f64>], center: Option<&CenterRow>) -> Result<Coefficients> {
    let n = r.len();
    if n == 0 {
        return Err(Error::Input("least squares needs at least one step".into()));
    }
    if pi.len() != n {
        return Err(Error::Dimension { expected: n, got: pi.len() });
    }
    let k = r[0].nrows();
    let eye = DMatrix::<f64>::identity(k, k);
    let diag: Vec<DMatrix<f64>> = r.iter().map(|ri| &eye + ri * ri.transpose()).collect();
    let lower: Vec<DMatrix<f64>> = r[1..].iter().map(|ri| -ri).collect();
    let m = BlockTridiagonal { diag, lower };
    let chol = m.factor()?;
    let condition = chol.condition_estimate();
    let mut warnings = Vec::new();
    if condition > CONDITION_WARNING {
        let msg = format!("least-squares normal matrix is ill-conditioned (estimate {condition:.3e})");
        warn!("{msg}");
        warnings.push(msg);
    }
    let mut y = chol.solve(pi)?;
    let mut y_center = None;
    if let Some(row) = center {
        if row.c.len() != n {
            return Err(Error::Dimension { expected: n, got: row.c.len() });
        }
        // g = G c with c_0 = 0
        let g: Vec<DVector<f64>> =
            (0..n).map(|i| if i == 0 { row.c[0].clone() } else { &row.c[i] - &r[i] * &row.c[i - 1] }).collect();
        let mg = chol.solve(&g)?;
        let cc: f64 = row.c.iter().map(|c| c.norm_squared()).sum();
        let gmg: f64 = g.iter().zip(&mg).map(|(a, b)| a.dot(b)).sum();
        let gmh: f64 = g.iter().zip(&y).map(|(a, b)| a.dot(b)).sum();
        let schur = cc - gmg;
        if !(schur > 1e-14 * cc.max(1e-300)) {
            return Err(Error::Singular(format!("center row is dependent on the shadowing constraints (Schur complement {schur:e})")));
        }
        let yc = (row.rhs - gmh) / schur;
        for (yi, mgi) in y.iter_mut().zip(&mg) {
            *yi -= mgi * yc;
        }
        y_center = Some(yc);
    }
    let mut a = g_transpose(r, &y);
    if let (Some(row), Some(yc)) = (center, y_center) {
        for (ai, ci) in a[1..].iter_mut().zip(&row.c) {
            *ai += ci * yc;
        }
    }
    Ok(Coefficients { a, y, y_center, condition, warnings })
}

/// `G^T Y`: `a_0 = -R_1^T y_1`, `a_n = y_n - R_{n+1}^T y_{n+1}`, `a_N = y_N`.
pub fn g_transpose(r: &[DMatrix<f64>], y: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let n = r.len();
    (0..=n)
        .map(|i| {
            let mut a = if i == 0 { DVector::zeros(y[0].len()) } else { y[i - 1].clone() };
            if i < n {
                a -= r[i].tr_mul(&y[i]);
            }
            a
        })
        .collect()
}

/// Largest `|a_n - R_n a_{n-1} - pi_n|` over `n = 1..=N`, relative to
/// `max(1, max |a_n|, max |pi_n|)`.
pub fn constraint_residual(r: &[DMatrix<f64>], pi: &[DVector<f64>], a: &[DVector<f64>]) -> f64 {
    let scale = a.iter().chain(pi).map(|x| x.norm()).fold(1.0, f64::max);
    (0..r.len()).map(|i| (&a[i + 1] - &r[i] * &a[i] - &pi[i]).norm()).fold(0.0, f64::max) / scale
}

/// `G` (and the center row appended, if any) as a dense matrix together
/// with `H`. Used as a reference in tests and diagnostics.
pub fn dense_system(r: &[DMatrix<f64>], pi: &[DVector<f64>], center: Option<&CenterRow>) -> (DMatrix<f64>, DVector<f64>) {
    let n = r.len();
    let k = r[0].nrows();
    let rows = n * k + usize::from(center.is_some());
    let mut g = DMatrix::zeros(rows, (n + 1) * k);
    let mut h = DVector::zeros(rows);
    for i in 0..n {
        g.view_mut((i * k, i * k), (k, k)).copy_from(&(-&r[i]));
        g.view_mut((i * k, (i + 1) * k), (k, k)).copy_from(&DMatrix::identity(k, k));
        h.rows_mut(i * k, k).copy_from(&pi[i]);
    }
    if let Some(row) = center {
        for (i, c) in row.c.iter().enumerate() {
            for j in 0..k {
                g[(n * k, (i + 1) * k + j)] = c[j];
            }
        }
        h[n * k] = row.rhs;
    }
    (g, h)
}

/// Stack `a_0 .. a_N` into one vector.
pub fn stack(a: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(a.iter().map(|x| x.len()).sum(), a.iter().flat_map(|x| x.iter().copied()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_blocks(r: &[f64], pi: &[f64]) -> (Vec<DMatrix<f64>>, Vec<DVector<f64>>) {
        (
            r.iter().map(|&x| DMatrix::from_element(1, 1, x)).collect(),
            pi.iter().map(|&x| DVector::from_element(1, x)).collect(),
        )
    }

    #[test]
    fn single_step_hand_solution() {
        let (r, pi) = scalar_blocks(&[1.0], &[1.0]);
        let c = min_norm_coefficients(&r, &pi, None).unwrap();
        assert!((c.a[0][0] + 0.5).abs() < 1e-15);
        assert!((c.a[1][0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let (r, pi) = scalar_blocks(&[2.0, 3.0, 0.5], &[0.0, 0.0, 0.0]);
        let c = min_norm_coefficients(&r, &pi, None).unwrap();
        assert!(c.a.iter().all(|a| a[0] == 0.0));
    }

    #[test]
    fn two_steps_match_pseudo_inverse() {
        let (r, pi) = scalar_blocks(&[1.0, 1.0], &[1.0, 1.0]);
        let c = min_norm_coefficients(&r, &pi, None).unwrap();
        let (g, h) = dense_system(&r, &pi, None);
        let x = g.pseudo_inverse(1e-14).unwrap() * h;
        assert!((stack(&c.a) - x).norm() < 1e-14);
        // a = (-1, 0, 1)
        assert!((c.a[0][0] + 1.0).abs() < 1e-14 && c.a[1][0].abs() < 1e-14 && (c.a[2][0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn center_row_is_satisfied() {
        let r: Vec<DMatrix<f64>> = (0..6).map(|i| DMatrix::from_row_slice(2, 2, &[1.5, 0.1 * i as f64, 0.0, 0.8])).collect();
        let pi: Vec<DVector<f64>> = (0..6).map(|i| DVector::from_vec(vec![0.3 * i as f64, -0.2])).collect();
        let row = CenterRow { c: (0..6).map(|i| DVector::from_vec(vec![0.1, 1.0 - 0.1 * i as f64])).collect(), rhs: 0.7 };
        let c = min_norm_coefficients(&r, &pi, Some(&row)).unwrap();
        let (g, h) = dense_system(&r, &pi, Some(&row));
        let x = stack(&c.a);
        assert!((&g * &x - &h).norm() < 1e-12);
        let oracle = g.pseudo_inverse(1e-14).unwrap() * h;
        assert!((x - oracle).norm() < 1e-12);
    }
}
