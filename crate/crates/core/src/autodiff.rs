//! Forward-mode automatic differentiation with batched seeds.
//!
//! [`Dual<S, N>`] carries a value and `N` partial derivatives. The inner
//! scalar `S` is itself generic, so `Dual<Dual<f64, 24>, 9>` propagates
//! second derivatives, which is how a stress obtained by differentiating a
//! strain energy is differentiated again for the element stiffness.
//!
//! Supported primitives: `+ - * /`, negation, `sqrt`, `exp`, `ln`, `powf`,
//! `powi`, `abs`, and value-branching helpers ([`Scalar::max_s`],
//! [`ramp`]). Branches look at [`Scalar::value`] only. The 3×3 tensor
//! helpers in [`crate::tensor`] are written against this set.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{FemError, Result};

/// Real scalar usable inside material and element kernels.
pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Lift a constant (all derivatives zero).
    fn cst(v: f64) -> Self;
    /// Primal value of the innermost real.
    fn value(&self) -> f64;
    /// True if the value and every carried derivative are finite.
    fn all_finite(&self) -> bool;

    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powf(self, p: f64) -> Self;
    fn powi(self, n: i32) -> Self;
    fn abs(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn one() -> Self {
        Self::cst(1.0)
    }
    /// Maximum by value; ties pick `self`.
    fn max_s(self, other: Self) -> Self {
        if self.value() >= other.value() {
            self
        } else {
            other
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

/// Ramp function ⟨x⟩₊ = max(x, 0). The derivative at exactly zero is zero.
#[inline]
pub fn ramp<S: Scalar>(x: S) -> S {
    if x.value() > 0.0 {
        x
    } else {
        S::zero()
    }
}

/// Dual number with `N` batched infinitesimal directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<S: Scalar, const N: usize> {
    pub re: S,
    pub eps: [S; N],
}

impl<S: Scalar, const N: usize> Dual<S, N> {
    pub fn constant(re: S) -> Self {
        Self {
            re,
            eps: [S::zero(); N],
        }
    }

    /// Independent variable seeded in direction `k`.
    pub fn variable(re: S, k: usize) -> Self {
        let mut eps = [S::zero(); N];
        eps[k] = S::one();
        Self { re, eps }
    }

    /// Apply a unary function with value `f` and derivative `df` (chain rule).
    #[inline]
    fn chain(self, f: S, df: S) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e *= df;
        }
        Self { re: f, eps }
    }
}

impl<S: Scalar, const N: usize> Add for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (a, b) in eps.iter_mut().zip(rhs.eps.iter()) {
            *a += *b;
        }
        Self {
            re: self.re + rhs.re,
            eps,
        }
    }
}

impl<S: Scalar, const N: usize> Sub for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (a, b) in eps.iter_mut().zip(rhs.eps.iter()) {
            *a -= *b;
        }
        Self {
            re: self.re - rhs.re,
            eps,
        }
    }
}

impl<S: Scalar, const N: usize> Mul for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [S::zero(); N];
        for k in 0..N {
            eps[k] = self.eps[k] * rhs.re + rhs.eps[k] * self.re;
        }
        Self {
            re: self.re * rhs.re,
            eps,
        }
    }
}

impl<S: Scalar, const N: usize> Div for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = S::one() / rhs.re;
        let re = self.re * inv;
        let mut eps = [S::zero(); N];
        for k in 0..N {
            eps[k] = (self.eps[k] - re * rhs.eps[k]) * inv;
        }
        Self { re, eps }
    }
}

impl<S: Scalar, const N: usize> Neg for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = -*e;
        }
        Self { re: -self.re, eps }
    }
}

impl<S: Scalar, const N: usize> AddAssign for Dual<S, N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<S: Scalar, const N: usize> SubAssign for Dual<S, N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<S: Scalar, const N: usize> MulAssign for Dual<S, N> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<S: Scalar, const N: usize> Add<f64> for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: f64) -> Self {
        Self {
            re: self.re + rhs,
            eps: self.eps,
        }
    }
}

impl<S: Scalar, const N: usize> Sub<f64> for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: f64) -> Self {
        Self {
            re: self.re - rhs,
            eps: self.eps,
        }
    }
}

impl<S: Scalar, const N: usize> Mul<f64> for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = *e * rhs;
        }
        Self {
            re: self.re * rhs,
            eps,
        }
    }
}

impl<S: Scalar, const N: usize> Div<f64> for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self * (1.0 / rhs)
    }
}

impl<S: Scalar, const N: usize> Scalar for Dual<S, N> {
    fn cst(v: f64) -> Self {
        Self::constant(S::cst(v))
    }
    fn value(&self) -> f64 {
        self.re.value()
    }
    fn all_finite(&self) -> bool {
        self.re.all_finite() && self.eps.iter().all(|e| e.all_finite())
    }
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        self.chain(r, S::cst(0.5) / r)
    }
    fn exp(self) -> Self {
        let r = self.re.exp();
        self.chain(r, r)
    }
    fn ln(self) -> Self {
        let d = S::one() / self.re;
        self.chain(self.re.ln(), d)
    }
    fn powf(self, p: f64) -> Self {
        let d = self.re.powf(p - 1.0) * p;
        self.chain(self.re.powf(p), d)
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::one();
        }
        let d = self.re.powi(n - 1) * n as f64;
        self.chain(self.re.powi(n), d)
    }
    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }
}

/// Dense row-major `rows × cols` matrix returned by the Jacobian drivers.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// `self · v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `wᵀ · self`
    pub fn tmul_vec(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, wi) in w.iter().enumerate() {
            for (o, a) in out
                .iter_mut()
                .zip(&self.data[i * self.cols..(i + 1) * self.cols])
            {
                *o += wi * a;
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Forward-mode Jacobian of `kernel` at `x`, all `D` seeds propagated in a
/// single batched evaluation. Returns an `R × D` matrix.
pub fn jacobian_forward<const D: usize, F>(kernel: F, x: &[f64; D]) -> Result<DenseMatrix>
where
    F: Fn(&[Dual<f64, D>; D]) -> Vec<Dual<f64, D>>,
{
    let seeded: [Dual<f64, D>; D] = std::array::from_fn(|k| Dual::variable(x[k], k));
    let out = kernel(&seeded);
    let mut jac = DenseMatrix::zeros(out.len(), D);
    for (i, r) in out.iter().enumerate() {
        if !r.all_finite() {
            return Err(FemError::NonFinite {
                element: usize::MAX,
                quad: i,
            });
        }
        for k in 0..D {
            jac.set(i, k, r.eps[k]);
        }
    }
    Ok(jac)
}

/// Vector-Jacobian product `wᵀ (∂kernel/∂θ)` evaluated through the forward
/// Jacobian followed by a transpose multiply.
pub fn vjp_params<const M: usize, F>(kernel: F, theta: &[f64; M], w: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[Dual<f64, M>; M]) -> Vec<Dual<f64, M>>,
{
    let jac = jacobian_forward(kernel, theta)?;
    if w.len() != jac.rows {
        return Err(FemError::InvalidArgument(format!(
            "covector length {} does not match kernel output length {}",
            w.len(),
            jac.rows
        )));
    }
    Ok(jac.tmul_vec(w))
}

#[cfg(test)]
mod tests {
    use super::*;

    type D2 = Dual<f64, 2>;

    fn central_fd<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64]) -> DenseMatrix {
        let f0 = f(x);
        let mut jac = DenseMatrix::zeros(f0.len(), x.len());
        for k in 0..x.len() {
            let h = 1e-6 * (1.0 + x[k].abs());
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            let (fp, fm) = (f(&xp), f(&xm));
            for i in 0..f0.len() {
                jac.set(i, k, (fp[i] - fm[i]) / (2.0 * h));
            }
        }
        jac
    }

    #[test]
    fn identity_kernel_gives_identity() {
        let jac = jacobian_forward(|x: &[Dual<f64, 3>; 3]| x.to_vec(), &[1.0, -2.0, 5.0]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(jac.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn product_rule() {
        let jac = jacobian_forward(|x: &[D2; 2]| vec![x[0] * x[1]], &[3.0, 4.0]).unwrap();
        assert_eq!(jac.get(0, 0), 4.0);
        assert_eq!(jac.get(0, 1), 3.0);
    }

    #[test]
    fn elementary_functions_match_finite_differences() {
        fn kernel<S: Scalar>(x: &[S]) -> Vec<S> {
            vec![
                (x[0] * x[1]).exp() / (x[2] + 2.0),
                x[0].sqrt() * x[2].ln() - x[1].powf(2.5),
                x[1].powi(3) + (x[0] - x[2]).abs(),
            ]
        }
        let x = [0.7, 1.3, 2.1];
        let ad = jacobian_forward(|d: &[Dual<f64, 3>; 3]| kernel(d), &x).unwrap();
        let fd = central_fd(|v| kernel(v), &x);
        for (a, b) in ad.data.iter().zip(&fd.data) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn nested_duals_give_second_derivatives() {
        // f(x) = x^3, f'' = 6x
        type Inner = Dual<f64, 1>;
        type Outer = Dual<Inner, 1>;
        let x = 1.7;
        let xo = Outer {
            re: Inner::variable(x, 0),
            eps: [Inner::cst(1.0)],
        };
        let y = xo * xo * xo;
        assert!((y.eps[0].re - 3.0 * x * x).abs() < 1e-12);
        assert!((y.eps[0].eps[0] - 6.0 * x).abs() < 1e-12);
    }

    #[test]
    fn ramp_derivative_at_zero_is_zero() {
        let x = Dual::<f64, 1>::variable(0.0, 0);
        assert_eq!(ramp(x).eps[0], 0.0);
        let x = Dual::<f64, 1>::variable(1e-12, 0);
        assert_eq!(ramp(x).eps[0], 1.0);
    }

    #[test]
    fn linear_kernel_jacobian_is_constant() {
        let a = [[1.0, -2.0, 0.5], [3.0, 0.25, -1.0]];
        let kern = |x: &[Dual<f64, 3>; 3]| {
            (0..2)
                .map(|i| x[0] * a[i][0] + x[1] * a[i][1] + x[2] * a[i][2])
                .collect::<Vec<_>>()
        };
        let j0 = jacobian_forward(kern, &[0.0, 0.0, 0.0]).unwrap();
        for x in [[1.0, 2.0, 3.0], [-4.0, 0.1, 9.0], [1e3, -1e2, 7.0]] {
            assert_eq!(jacobian_forward(kern, &x).unwrap(), j0);
        }
    }

    #[test]
    fn vjp_zero_covector() {
        let g = vjp_params(
            |t: &[D2; 2]| vec![t[0] * t[1], t[0].exp()],
            &[0.3, 0.4],
            &[0.0, 0.0],
        )
        .unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_output_is_reported() {
        let r = jacobian_forward(|x: &[Dual<f64, 1>; 1]| vec![x[0].ln()], &[-1.0]);
        assert!(matches!(r, Err(FemError::NonFinite { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn transpose_consistency(w in proptest::collection::vec(-5.0f64..5.0, 3),
                                     v in proptest::collection::vec(-5.0f64..5.0, 2),
                                     t0 in 0.1f64..2.0, t1 in 0.1f64..2.0) {
                let kern = |t: &[D2; 2]| vec![t[0] * t[1], t[0].sqrt() + t[1], (t[1] * 0.3).exp()];
                let jac = jacobian_forward(kern, &[t0, t1]).unwrap();
                let g = vjp_params(kern, &[t0, t1], &w).unwrap();
                let jv = jac.mul_vec(&v);
                let lhs: f64 = w.iter().zip(&jv).map(|(a, b)| a * b).sum();
                let rhs: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            }
        }
    }
}
