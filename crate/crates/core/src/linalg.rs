//! Small dense helpers on top of nalgebra: sign-fixed QR, block-tridiagonal
//! Cholesky and vector utilities.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Diagonal entries of `R` below this magnitude signal a rank-deficient basis.
pub const DEGENERATE_PIVOT: f64 = 1e-13;

/// Thin QR `M = Q R` with `diag(R) > 0`.
pub fn qr_positive(m: DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = m.ncols();
    if k > m.nrows() {
        return Err(Error::Input(format!("QR of a {}x{} matrix needs rows >= columns", m.nrows(), k)));
    }
    let qr = m.qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..k {
        let rii = r[(i, i)];
        if !rii.is_finite() || rii.abs() < DEGENERATE_PIVOT {
            return Err(Error::DegenerateBasis { index: i, value: rii });
        }
        if rii < 0.0 {
            q.column_mut(i).neg_mut();
            r.row_mut(i).neg_mut();
        }
    }
    Ok((q, r))
}

/// Symmetric positive-definite block-tridiagonal matrix with `k x k` blocks:
/// `diag[i]` on the diagonal and `lower[i]` at block position `(i+1, i)`.
#[derive(Clone, Debug)]
pub struct BlockTridiagonal {
    pub diag: Vec<DMatrix<f64>>,
    pub lower: Vec<DMatrix<f64>>,
}

/// Block Cholesky factor `L` with `L_ii` lower triangular and `L_{i+1,i}`.
#[derive(Clone, Debug)]
pub struct BlockCholesky {
    diag: Vec<DMatrix<f64>>,
    lower: Vec<DMatrix<f64>>,
}

impl BlockTridiagonal {
    pub fn blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn factor(&self) -> Result<BlockCholesky> {
        let n = self.diag.len();
        if self.lower.len() + 1 != n.max(1) {
            return Err(Error::Input("block tridiagonal needs one fewer off-diagonal block".into()));
        }
        let mut ld: Vec<DMatrix<f64>> = Vec::with_capacity(n);
        let mut ll: Vec<DMatrix<f64>> = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n {
            let mut a = self.diag[i].clone();
            if i > 0 {
                let b: &DMatrix<f64> = &ll[i - 1];
                a -= b * b.transpose();
            }
            let c = a
                .cholesky()
                .ok_or_else(|| Error::Singular(format!("block {i} of the normal matrix is not positive definite")))?;
            let l = c.l();
            if i + 1 < n {
                // L_{i+1,i} = A_{i+1,i} L_ii^{-T}
                let x = l
                    .solve_lower_triangular(&self.lower[i].transpose())
                    .ok_or_else(|| Error::Singular(format!("block {i} triangular solve failed")))?;
                ll.push(x.transpose());
            }
            ld.push(l);
        }
        Ok(BlockCholesky { diag: ld, lower: ll })
    }

    /// `y = M x` for a stacked vector.
    pub fn mul(&self, x: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                let mut y = &self.diag[i] * &x[i];
                if i > 0 {
                    y += &self.lower[i - 1] * &x[i - 1];
                }
                if i + 1 < n {
                    y += self.lower[i].transpose() * &x[i + 1];
                }
                y
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.diag.len();
        let k = self.diag.first().map_or(0, |b| b.nrows());
        let mut m = DMatrix::zeros(n * k, n * k);
        for i in 0..n {
            m.view_mut((i * k, i * k), (k, k)).copy_from(&self.diag[i]);
            if i + 1 < n {
                m.view_mut(((i + 1) * k, i * k), (k, k)).copy_from(&self.lower[i]);
                m.view_mut((i * k, (i + 1) * k), (k, k)).copy_from(&self.lower[i].transpose());
            }
        }
        m
    }
}

impl BlockCholesky {
    pub fn solve(&self, rhs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let n = self.diag.len();
        if rhs.len() != n {
            return Err(Error::Dimension { expected: n, got: rhs.len() });
        }
        let fail = || Error::Singular("triangular solve failed".into());
        let mut z: Vec<DVector<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut r = rhs[i].clone();
            if i > 0 {
                r -= &self.lower[i - 1] * &z[i - 1];
            }
            z.push(self.diag[i].solve_lower_triangular(&r).ok_or_else(fail)?);
        }
        let mut x = vec![DVector::zeros(0); n];
        for i in (0..n).rev() {
            let mut r = z[i].clone();
            if i + 1 < n {
                r -= self.lower[i].transpose() * &x[i + 1];
            }
            x[i] = self.diag[i].transpose().solve_upper_triangular(&r).ok_or_else(fail)?;
        }
        Ok(x)
    }

    /// Cheap condition estimate: squared ratio of extreme pivots of the factor.
    pub fn condition_estimate(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for l in &self.diag {
            for i in 0..l.nrows() {
                let p = l[(i, i)].abs();
                lo = lo.min(p);
                hi = hi.max(p);
            }
        }
        (hi / lo).powi(2)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_identity_and_diagonal() {
        let (q, r) = qr_positive(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(q, DMatrix::identity(3, 3));
        assert_eq!(r, DMatrix::identity(3, 3));
        let (q, r) = qr_positive(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]))).unwrap();
        assert!((q - DMatrix::identity(2, 2)).abs().max() < 1e-15);
        assert!((r[(0, 0)] - 2.0).abs() < 1e-15 && (r[(1, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn qr_hand_gram_schmidt() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let (q, r) = qr_positive(m.clone()).unwrap();
        assert!((r[(0, 0)] - 2f64.sqrt()).abs() < 1e-14);
        assert!(r[(1, 1)] > 0.0);
        assert!((&q * &r - m).abs().max() < 1e-14);
    }

    #[test]
    fn qr_negative_pivots_are_flipped() {
        let m = DMatrix::from_row_slice(3, 2, &[-3.0, 1.0, 0.0, -2.0, 4.0, 0.5]);
        let (q, r) = qr_positive(m.clone()).unwrap();
        assert!(r[(0, 0)] > 0.0 && r[(1, 1)] > 0.0);
        assert!((q.transpose() * &q - DMatrix::identity(2, 2)).abs().max() < 1e-14);
        assert!((&q * &r - m).abs().max() < 1e-14);
    }

    #[test]
    fn qr_rank_deficient() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(qr_positive(m), Err(Error::DegenerateBasis { index: 1, .. })));
    }

    #[test]
    fn block_cholesky_matches_dense_solve() {
        let k = 2;
        let n = 5;
        let mut diag = Vec::new();
        let mut lower = Vec::new();
        for i in 0..n {
            let r = DMatrix::from_row_slice(k, k, &[1.0 + 0.1 * i as f64, 0.3, 0.0, 0.7]);
            diag.push(DMatrix::identity(k, k) + &r * r.transpose());
            if i + 1 < n {
                lower.push(-r);
            }
        }
        let m = BlockTridiagonal { diag, lower };
        let rhs: Vec<DVector<f64>> = (0..n).map(|i| DVector::from_vec(vec![i as f64, 1.0 - i as f64])).collect();
        let x = m.factor().unwrap().solve(&rhs).unwrap();
        let flat_rhs = DVector::from_iterator(n * k, rhs.iter().flat_map(|v| v.iter().copied()));
        let dense = m.to_dense().lu().solve(&flat_rhs).unwrap();
        for i in 0..n {
            for j in 0..k {
                assert!((x[i][j] - dense[i * k + j]).abs() < 1e-12);
            }
        }
        let back = m.mul(&x);
        for (a, b) in back.iter().zip(&rhs) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
