use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Chebyshev–Gauss–Lobatto points `y_j = cos(j pi / (n - 1))`, `j < n`, and
/// the collocation differentiation matrix on them (row-major, `n x n`).
///
/// Off-diagonal entries follow the closed form
/// `D_ij = (c_i / c_j) (-1)^(i+j) / (y_i - y_j)` with `c_0 = c_{n-1} = 2`;
/// diagonal entries are the negated row sums so constants are annihilated
/// exactly.
pub fn cheb<T: Scalar>(n: usize) -> Result<(Vec<T>, Vec<Vec<T>>)> {
    if n < 2 {
        return Err(Error::Input(format!("Chebyshev grid needs at least 2 points, got {n}")));
    }
    let m = (n - 1) as f64;
    let y: Vec<f64> = (0..n).map(|j| (std::f64::consts::PI * j as f64 / m).cos()).collect();
    let c = |i: usize| -> f64 {
        let base = if i == 0 || i == n - 1 { 2.0 } else { 1.0 };
        if i % 2 == 0 {
            base
        } else {
            -base
        }
    };
    let mut d = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            if i != j {
                let v = c(i) / c(j) / (y[i] - y[j]);
                d[i][j] = v;
                row_sum += v;
            }
        }
        d[i][i] = -row_sum;
    }
    let y = y.into_iter().map(T::cst).collect();
    let d = d.into_iter().map(|r| r.into_iter().map(T::cst).collect()).collect();
    Ok((y, d))
}
