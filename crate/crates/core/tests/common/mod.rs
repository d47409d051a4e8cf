//! Independent dense oracles. Nothing here calls the solvers or the shift
//! solver: Krylov bases are built from explicit matrix powers and inverses,
//! and least-squares problems are solved by SVD.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// `min ||y - A B c||` over the column span of `B`; returns `B c`.
pub fn least_squares_over_span(a: &DMatrix<f64>, y: &DVector<f64>, basis: &DMatrix<f64>) -> DVector<f64> {
    let q = basis.clone().qr().q();
    let aq = a * &q;
    let c = aq.svd(true, true).solve(y, 1e-300).expect("svd solve");
    q * c
}

/// Columns `(I + A^T A/gamma)^{-k} A^T y`, `k = 0..m-1`, via an explicit inverse.
pub fn rational_krylov_basis(a: &DMatrix<f64>, y: &DVector<f64>, gamma: f64, m: usize) -> DMatrix<f64> {
    let n = a.ncols();
    let shifted = DMatrix::identity(n, n) + a.tr_mul(a) / gamma;
    let inverse = shifted.try_inverse().expect("shifted normal matrix is invertible");
    let mut col = a.tr_mul(y);
    let mut b = DMatrix::zeros(n, m);
    for k in 0..m {
        b.set_column(k, &col);
        col = &inverse * col;
    }
    b
}

/// Columns `(A^T A)^k A^T y`, `k = 0..m-1`.
pub fn polynomial_krylov_basis(a: &DMatrix<f64>, y: &DVector<f64>, m: usize) -> DMatrix<f64> {
    let n = a.ncols();
    let normal = a.tr_mul(a);
    let mut col = a.tr_mul(y);
    let mut b = DMatrix::zeros(n, m);
    for k in 0..m {
        b.set_column(k, &col);
        col = &normal * col;
    }
    b
}

/// Moore-Penrose solution `A^+ y` by SVD with a relative rank cutoff.
pub fn pseudoinverse_solve(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let cutoff = 1e-12 * svd.singular_values.max();
    svd.solve(y, cutoff).expect("svd solve")
}

pub fn rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
