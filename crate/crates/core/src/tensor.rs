//! Small 3×3 tensor helpers generic over [`Scalar`].

use crate::autodiff::Scalar;

pub type Mat3<S> = [[S; 3]; 3];

pub fn zeros<S: Scalar>() -> Mat3<S> {
    [[S::zero(); 3]; 3]
}

pub fn identity<S: Scalar>() -> Mat3<S> {
    let mut m = zeros();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = S::one();
    }
    m
}

pub fn lift<S: Scalar>(a: &Mat3<f64>) -> Mat3<S> {
    a.map(|row| row.map(S::cst))
}

pub fn values<S: Scalar>(a: &Mat3<S>) -> Mat3<f64> {
    a.map(|row| row.map(|v| v.value()))
}

pub fn trace<S: Scalar>(a: &Mat3<S>) -> S {
    a[0][0] + a[1][1] + a[2][2]
}

pub fn transpose<S: Scalar>(a: &Mat3<S>) -> Mat3<S> {
    std::array::from_fn(|i| std::array::from_fn(|j| a[j][i]))
}

pub fn add<S: Scalar>(a: &Mat3<S>, b: &Mat3<S>) -> Mat3<S> {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][j] + b[i][j]))
}

pub fn sub<S: Scalar>(a: &Mat3<S>, b: &Mat3<S>) -> Mat3<S> {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][j] - b[i][j]))
}

pub fn scale<S: Scalar>(a: &Mat3<S>, s: S) -> Mat3<S> {
    a.map(|row| row.map(|v| v * s))
}

pub fn matmul<S: Scalar>(a: &Mat3<S>, b: &Mat3<S>) -> Mat3<S> {
    std::array::from_fn(|i| {
        std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j])
    })
}

/// Double contraction `a : b`.
pub fn ddot<S: Scalar>(a: &Mat3<S>, b: &Mat3<S>) -> S {
    let mut s = S::zero();
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

/// Symmetric part `(a + aᵀ)/2`.
pub fn sym<S: Scalar>(a: &Mat3<S>) -> Mat3<S> {
    std::array::from_fn(|i| std::array::from_fn(|j| (a[i][j] + a[j][i]) * 0.5))
}

/// Deviatoric part `a − tr(a)/3 I`.
pub fn dev<S: Scalar>(a: &Mat3<S>) -> Mat3<S> {
    let p = trace(a) / 3.0;
    let mut d = *a;
    for (i, row) in d.iter_mut().enumerate() {
        row[i] -= p;
    }
    d
}

pub fn det<S: Scalar>(a: &Mat3<S>) -> S {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Inverse via the adjugate. The caller guarantees `det(a) != 0`.
pub fn inverse<S: Scalar>(a: &Mat3<S>) -> Mat3<S> {
    let d = det(a);
    let inv_d = S::one() / d;
    let c =
        |i0: usize, j0: usize, i1: usize, j1: usize| a[i0][j0] * a[i1][j1] - a[i0][j1] * a[i1][j0];
    [
        [
            c(1, 1, 2, 2) * inv_d,
            -c(0, 1, 2, 2) * inv_d,
            c(0, 1, 1, 2) * inv_d,
        ],
        [
            -c(1, 0, 2, 2) * inv_d,
            c(0, 0, 2, 2) * inv_d,
            -c(0, 0, 1, 2) * inv_d,
        ],
        [
            c(1, 0, 2, 1) * inv_d,
            -c(0, 0, 2, 1) * inv_d,
            c(0, 0, 1, 1) * inv_d,
        ],
    ]
}
