//! Truncated real DFT along one axis, as dense matrices.

use ndarray::Array2;
use std::f64::consts::PI;

/// Forward and inverse maps between `n` real samples and the lowest `m`
/// complex modes.
///
/// Forward: `X_re = x · fwd_cosᵀ`, `X_im = x · fwd_sinᵀ`. Inverse, for real
/// output: `y = Y_re · inv_cos + Y_im · inv_sin`, the Hermitian half-spectrum
/// synthesis with the imaginary parts of the DC and Nyquist modes ignored.
#[derive(Clone, Debug)]
pub struct TruncatedDft {
    pub n: usize,
    pub m: usize,
    pub fwd_cos: Array2<f64>,
    pub fwd_sin: Array2<f64>,
    pub inv_cos: Array2<f64>,
    pub inv_sin: Array2<f64>,
}

impl TruncatedDft {
    pub fn new(n: usize, m: usize) -> Self {
        assert!(m >= 1 && m <= n / 2 + 1, "{m} modes for {n} samples");
        let angle = |k: usize, x: usize| 2.0 * PI * ((k * x) % n) as f64 / n as f64;
        let weight = |k: usize| if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
        Self {
            n,
            m,
            fwd_cos: Array2::from_shape_fn((m, n), |(k, x)| angle(k, x).cos()),
            fwd_sin: Array2::from_shape_fn((m, n), |(k, x)| -angle(k, x).sin()),
            inv_cos: Array2::from_shape_fn((m, n), |(k, x)| weight(k) * angle(k, x).cos() / n as f64),
            inv_sin: Array2::from_shape_fn((m, n), |(k, x)| -weight(k) * angle(k, x).sin() / n as f64),
        }
    }
}
