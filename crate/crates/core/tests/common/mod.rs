#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use shrinker_spectra::sparse::CsrMatrix;
use shrinker_spectra::WeightedOperators;

pub fn dense(a: &CsrMatrix) -> DMatrix<f64> {
    let n = a.dim();
    let mut d = DMatrix::zeros(n, n);
    for (i, j, v) in a.triplets() {
        d[(i, j)] += v;
    }
    d
}

/// All eigenvalues of `K u = λ M u`, ascending, by Cholesky reduction.
pub fn dense_generalized_eigenvalues(ops: &WeightedOperators) -> Vec<f64> {
    let k = dense(ops.stiffness());
    let m = dense(ops.mass());
    let l = m.cholesky().expect("mass matrix is positive definite").l();
    let linv = l.clone().try_inverse().expect("triangular factor is invertible");
    let c = &linv * k * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let mut vals: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}
