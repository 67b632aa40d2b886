use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Explicit fixed-step time integration schemes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ForwardEuler,
    /// Classical four-stage Runge–Kutta.
    Rk4,
    /// Tsitouras 5(4); only the fifth-order solution is used.
    Tsit5,
}

struct Tableau {
    a: &'static [&'static [f64]],
    b: &'static [f64],
    c: &'static [f64],
}

const EULER: Tableau = Tableau { a: &[&[]], b: &[1.0], c: &[0.0] };

const RK4: Tableau = Tableau {
    a: &[&[], &[0.5], &[0.0, 0.5], &[0.0, 0.0, 1.0]],
    b: &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
    c: &[0.0, 0.5, 0.5, 1.0],
};

const TSIT5: Tableau = Tableau {
    a: &[
        &[],
        &[0.161],
        &[-0.008480655492356989, 0.335480655492357],
        &[2.897153057105493, -6.359448489975075, 4.3622954328695815],
        &[5.325864828439257, -11.748883564062828, 7.4955393428898365, -0.09249506636175525],
        &[
            5.86145544294642,
            -12.92096931784711,
            8.159367898576159,
            -0.071584973281401,
            -0.028269050394068383,
        ],
    ],
    b: &[
        0.09646076681806523,
        0.01,
        0.4798896504144996,
        1.379008574103742,
        -3.290069515436081,
        2.324710524099774,
    ],
    c: &[0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0],
};

impl Scheme {
    fn tableau(self) -> &'static Tableau {
        match self {
            Scheme::ForwardEuler => &EULER,
            Scheme::Rk4 => &RK4,
            Scheme::Tsit5 => &TSIT5,
        }
    }

    pub fn order(self) -> u32 {
        match self {
            Scheme::ForwardEuler => 1,
            Scheme::Rk4 => 4,
            Scheme::Tsit5 => 5,
        }
    }

    pub fn stages(self) -> usize {
        self.tableau().b.len()
    }

    /// Amplification factor `R(z)` of the scheme on `du/dt = lambda u`,
    /// `z = lambda dt`. The step is linearly stable for `z` when `|R(z)| <= 1`.
    pub fn amplification(self, z: Complex<f64>) -> Complex<f64> {
        let tab = self.tableau();
        let mut g: Vec<Complex<f64>> = Vec::with_capacity(tab.b.len());
        for row in tab.a {
            let s = row.iter().zip(&g).fold(Complex::new(0.0, 0.0), |acc, (&a, &gj)| acc + gj * a);
            g.push(Complex::new(1.0, 0.0) + z * s);
        }
        let s = tab.b.iter().zip(&g).fold(Complex::new(0.0, 0.0), |acc, (&b, &gj)| acc + gj * b);
        Complex::new(1.0, 0.0) + z * s
    }

    /// Advance `u` by one step of size `dt` for the autonomous field `rhs`.
    pub fn advance<T, F>(self, rhs: F, u: &[T], dt: T) -> Vec<T>
    where
        T: Scalar,
        F: Fn(&[T], &mut [T]),
    {
        let tab = self.tableau();
        let d = u.len();
        let stages = tab.b.len();
        debug_assert_eq!(tab.c.len(), stages);
        let mut k: Vec<Vec<T>> = Vec::with_capacity(stages);
        let mut stage = vec![T::zero(); d];
        for (s, row) in tab.a.iter().enumerate() {
            stage.copy_from_slice(u);
            for (j, &aij) in row.iter().enumerate() {
                if aij != 0.0 {
                    let w = dt * T::cst(aij);
                    for (x, kj) in stage.iter_mut().zip(&k[j]) {
                        *x = *x + w * *kj;
                    }
                }
            }
            let mut ks = vec![T::zero(); d];
            rhs(&stage, &mut ks);
            k.push(ks);
            debug_assert_eq!(k.len(), s + 1);
        }
        let mut out = u.to_vec();
        for (ks, &bs) in k.iter().zip(tab.b) {
            let w = dt * T::cst(bs);
            for (x, kx) in out.iter_mut().zip(ks) {
                *x = *x + w * *kx;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(u: &[f64], du: &mut [f64]) {
        du[0] = -u[0];
        du[1] = u[0] - 2.0 * u[1];
    }

    fn integrate(scheme: Scheme, dt: f64) -> Vec<f64> {
        let steps = (1.0 / dt).round() as usize;
        let mut u = vec![1.0, 0.0];
        for _ in 0..steps {
            u = scheme.advance(decay, &u, dt);
        }
        u
    }

    fn exact() -> Vec<f64> {
        let e1 = (-1.0f64).exp();
        vec![e1, e1 - (-2.0f64).exp()]
    }

    fn error(scheme: Scheme, dt: f64) -> f64 {
        integrate(scheme, dt).iter().zip(exact()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn observed_orders() {
        for scheme in [Scheme::ForwardEuler, Scheme::Rk4, Scheme::Tsit5] {
            let e1 = error(scheme, 0.1);
            let e2 = error(scheme, 0.05);
            let observed = (e1 / e2).log2();
            assert!(
                observed > scheme.order() as f64 - 0.3,
                "{scheme:?}: observed order {observed}"
            );
        }
    }

    #[test]
    fn amplification_matches_taylor() {
        let z = Complex::new(-0.3, 0.2);
        let taylor = |order: u32| {
            let mut term = Complex::new(1.0, 0.0);
            let mut sum = term;
            for k in 1..=order {
                term = term * z / k as f64;
                sum += term;
            }
            sum
        };
        assert!((Scheme::ForwardEuler.amplification(z) - taylor(1)).norm() < 1e-15);
        assert!((Scheme::Rk4.amplification(z) - taylor(4)).norm() < 1e-15);
        // Tsit5 is exact through z^5 with a small z^6 residual
        assert!((Scheme::Tsit5.amplification(z) - z.exp()).norm() < 1e-5);
        assert!(Scheme::ForwardEuler.amplification(Complex::new(-2.5, 0.0)).norm() > 1.0);
    }

    #[test]
    fn stage_sums_match_nodes() {
        for scheme in [Scheme::ForwardEuler, Scheme::Rk4, Scheme::Tsit5] {
            let t = scheme.tableau();
            for (row, c) in t.a.iter().zip(t.c) {
                let s: f64 = row.iter().sum();
                assert!((s - c).abs() < 1e-14);
            }
            assert!((t.b.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }
}
