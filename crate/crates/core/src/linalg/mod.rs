//! Sparse symmetric storage, banded Cholesky and generalized symmetric
//! eigensolvers.

mod banded;
mod geneig;
mod sparse;

pub use banded::BandedCholesky;
pub use geneig::{dense_generalized, lanczos_generalized, GenEigenpairs, LanczosOptions};
pub use sparse::{CsrMatrix, SparseSymmetricMatrix};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
