use std::cell::RefCell;
use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Rem, Sub};

use num_traits::{FromPrimitive, Num, One, Zero};

use crate::scalar::Scalar;

const NO_PARENT: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
struct Node<T> {
    parents: [u32; 2],
    partials: [T; 2],
}

/// Wengert list for reverse-mode differentiation.
///
/// Every operation on a [`Var`] bound to this tape appends one node holding
/// the local partial derivatives with respect to its (at most two) operands.
/// [`Tape::pullback`] then sweeps the list backwards.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape { nodes: RefCell::new(Vec::with_capacity(n)) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register an independent variable.
    pub fn var(&self, val: T) -> Var<'_, T> {
        let idx = self.push([NO_PARENT; 2], [T::zero(); 2]);
        Var { val, idx, tape: Some(self) }
    }

    fn push(&self, parents: [u32; 2], partials: [T; 2]) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node { parents, partials });
        idx
    }

    /// Back-propagate the cotangents `seeds` (pairs of output variable and
    /// weight) and return the adjoint of every node on the tape.
    pub fn pullback(&self, seeds: &[(Var<'_, T>, T)]) -> Adjoints<T> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![T::zero(); nodes.len()];
        for (v, w) in seeds {
            if v.idx != NO_PARENT {
                adj[v.idx as usize] = adj[v.idx as usize] + *w;
            }
        }
        for i in (0..nodes.len()).rev() {
            let a = adj[i];
            if a.is_zero() {
                continue;
            }
            let node = &nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NO_PARENT {
                    adj[p as usize] = adj[p as usize] + a * node.partials[k];
                }
            }
        }
        Adjoints { adj }
    }
}

/// Result of a reverse sweep.
pub struct Adjoints<T> {
    adj: Vec<T>,
}

impl<T: Scalar> Adjoints<T> {
    pub fn wrt(&self, v: &Var<'_, T>) -> T {
        if v.idx == NO_PARENT {
            T::zero()
        } else {
            self.adj[v.idx as usize]
        }
    }
}

/// Handle to a value recorded on a [`Tape`]. Constants carry no tape.
#[derive(Clone, Copy, Debug)]
pub struct Var<'t, T> {
    val: T,
    idx: u32,
    tape: Option<&'t Tape<T>>,
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn constant(val: T) -> Self {
        Var { val, idx: NO_PARENT, tape: None }
    }

    pub fn value(&self) -> T {
        self.val
    }

    fn unary(self, val: T, d: T) -> Self {
        match self.tape {
            Some(t) => Var { val, idx: t.push([self.idx, NO_PARENT], [d, T::zero()]), tape: Some(t) },
            None => Var::constant(val),
        }
    }

    fn binary(self, rhs: Self, val: T, da: T, db: T) -> Self {
        match self.tape.or(rhs.tape) {
            Some(t) => Var { val, idx: t.push([self.idx, rhs.idx], [da, db]), tape: Some(t) },
            None => Var::constant(val),
        }
    }
}

impl<T: Scalar> PartialEq for Var<'_, T> {
    fn eq(&self, other: &Self) -> bool {
        self.val == other.val
    }
}

impl<T: Scalar> PartialOrd for Var<'_, T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.val.partial_cmp(&other.val)
    }
}

impl<T: Scalar> Add for Var<'_, T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.val + rhs.val, T::one(), T::one())
    }
}

impl<T: Scalar> Sub for Var<'_, T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.val - rhs.val, T::one(), -T::one())
    }
}

impl<T: Scalar> Mul for Var<'_, T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<T: Scalar> Div for Var<'_, T> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = T::one() / rhs.val;
        let q = self.val * inv;
        self.binary(rhs, q, inv, -q * inv)
    }
}

impl<T: Scalar> Rem for Var<'_, T> {
    type Output = Self;
    fn rem(self, rhs: Self) -> Self {
        let r = self.val % rhs.val;
        let k = (self.val - r) / rhs.val;
        self.binary(rhs, r, T::one(), -k)
    }
}

impl<T: Scalar> Neg for Var<'_, T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.val, -T::one())
    }
}

impl<T: Scalar> Zero for Var<'_, T> {
    fn zero() -> Self {
        Var::constant(T::zero())
    }
    fn is_zero(&self) -> bool {
        self.val.is_zero()
    }
}

impl<T: Scalar> One for Var<'_, T> {
    fn one() -> Self {
        Var::constant(T::one())
    }
}

impl<T: Scalar> Num for Var<'_, T> {
    type FromStrRadixErr = T::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        T::from_str_radix(s, radix).map(Var::constant)
    }
}

impl<T: Scalar> FromPrimitive for Var<'_, T> {
    fn from_i64(n: i64) -> Option<Self> {
        T::from_i64(n).map(Var::constant)
    }
    fn from_u64(n: u64) -> Option<Self> {
        T::from_u64(n).map(Var::constant)
    }
    fn from_f64(n: f64) -> Option<Self> {
        T::from_f64(n).map(Var::constant)
    }
}

impl<T: Scalar> Scalar for Var<'_, T> {
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, T::one() / (T::cst(2.0) * s))
    }
    fn abs(self) -> Self {
        if self.val < T::zero() {
            -self
        } else {
            self
        }
    }
    fn sin(self) -> Self {
        self.unary(self.val.sin(), self.val.cos())
    }
    fn cos(self) -> Self {
        self.unary(self.val.cos(), -self.val.sin())
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Var::constant(T::one());
        }
        self.unary(self.val.powi(n), T::cst(n as f64) * self.val.powi(n - 1))
    }
    fn re(self) -> f64 {
        self.val.re()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_product_chain() {
        let tape = Tape::<f64>::new();
        let x = tape.var(3.0);
        let y = tape.var(-2.0);
        let f = x * x * y + (x / y).sin();
        let adj = tape.pullback(&[(f, 1.0)]);
        let c = (3.0f64 / -2.0).cos();
        assert!((adj.wrt(&x) - (2.0 * 3.0 * -2.0 + c / -2.0)).abs() < 1e-14);
        assert!((adj.wrt(&y) - (9.0 - c * 3.0 / 4.0)).abs() < 1e-14);
    }

    #[test]
    fn constants_do_not_touch_tape() {
        let tape = Tape::<f64>::new();
        let c = Var::<f64>::constant(2.0) * Var::constant(4.0);
        assert_eq!(c.value(), 8.0);
        assert!(tape.is_empty());
    }

    #[test]
    fn multiple_seeds_give_vjp() {
        let tape = Tape::<f64>::new();
        let x = tape.var(1.5);
        let a = x * x;
        let b = x.powi(3);
        // z = (2, -1): d/dx (2 x^2 - x^3) = 4x - 3x^2
        let adj = tape.pullback(&[(a, 2.0), (b, -1.0)]);
        assert!((adj.wrt(&x) - (6.0 - 6.75)).abs() < 1e-14);
    }
}
