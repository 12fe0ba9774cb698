//! Gaussian kernel and Gram matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// exp(-||a - b||^2 / sigma^2). Note the paper's convention: sigma^2 in the
/// denominator, not 2*sigma^2.
pub fn gaussian_kernel(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (sigma * sigma)).exp()
}

/// Gram matrix with entry (i, j) = k(A[i], B[j]).
pub fn gram(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64) -> Result<DMatrix<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dim = a[0].len();
    if a.iter().chain(b.iter()).any(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch(
            "inconsistent vector dimensions in gram".into(),
        ));
    }
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
        gaussian_kernel(&a[i], &b[j], sigma)
    }))
}
