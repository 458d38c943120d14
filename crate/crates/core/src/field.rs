//! Random coefficient fields and forcing terms.

use nalgebra::{DMatrix, SymmetricEigen};
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::grid::{GridPair, NodalField};
use crate::rng::{normals, streams};
use crate::{Error, Result};

/// Positive nodal coefficient on the fine grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    pub values: NodalField,
    pub contrast_lo: f64,
    pub contrast_hi: f64,
}

impl CoefficientField {
    pub fn from_values(values: NodalField) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (node, &v) in values.values.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NonPositiveCoefficient { node, value: v });
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Ok(Self { values, contrast_lo: lo, contrast_hi: hi })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KleParams {
    pub l_x: f64,
    pub l_y: f64,
    pub sigma2: f64,
    pub energy_fraction: f64,
    /// Nodes per side of the auxiliary eigensolve grid.
    pub aux_grid: usize,
    pub contrast_target: f64,
}

impl Default for KleParams {
    fn default() -> Self {
        Self { l_x: 0.02, l_y: 0.6, sigma2: 2.0, energy_fraction: 0.95, aux_grid: 32, contrast_target: 9600.0 }
    }
}

impl KleParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.l_x > 0.0
            && self.l_y > 0.0
            && self.sigma2 > 0.0
            && self.energy_fraction > 0.0
            && self.energy_fraction <= 1.0
            && self.contrast_target > 1.0
            && (2..=64).contains(&self.aux_grid);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid KLE parameters {self:?}")))
        }
    }

    pub fn covariance(&self, (x1, y1): (f64, f64), (x2, y2): (f64, f64)) -> f64 {
        let dx = (x1 - x2) / self.l_x;
        let dy = (y1 - y2) / self.l_y;
        self.sigma2 * (-(dx * dx + dy * dy).sqrt()).exp()
    }

    fn aux_coord(&self, k: usize) -> (f64, f64) {
        let s = (self.aux_grid - 1) as f64;
        ((k % self.aux_grid) as f64 / s, (k / self.aux_grid) as f64 / s)
    }

    /// Dense covariance matrix over the auxiliary nodes, row-major ordering.
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let n = self.aux_grid * self.aux_grid;
        DMatrix::from_fn(n, n, |i, j| self.covariance(self.aux_coord(i), self.aux_coord(j)))
    }
}

/// Truncated expansion: eigenvalues in descending order and eigenfunctions
/// sampled on the auxiliary grid, orthonormal under the discrete inner
/// product `<u, v> = (1/N) Σ u_k v_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct KleDecomposition {
    pub params: KleParams,
    pub eigenvalues: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
    /// Sum of all eigenvalues before truncation.
    pub total_energy: f64,
}

impl KleDecomposition {
    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }
}

pub fn kle_eigendecomposition(params: &KleParams) -> Result<KleDecomposition> {
    params.validate()?;
    let n = params.aux_grid * params.aux_grid;
    let w = 1.0 / n as f64;
    let c = params.covariance_matrix();
    let eig = SymmetricEigen::new(c * w);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lmax = eig.eigenvalues[order[0]];
    let lmin = eig.eigenvalues[order[n - 1]];
    let tol = 1e-10 * lmax.abs() * n as f64;
    if lmin < -tol {
        return Err(Error::NotPsd { min: lmin, max: lmax });
    }
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let mut acc = 0.0;
    let mut keep = n;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if acc >= params.energy_fraction * total {
            keep = i + 1;
            break;
        }
    }
    let scale = 1.0 / w.sqrt();
    let eigenfunctions = order[..keep].iter().map(|&k| eig.eigenvectors.column(k).iter().map(|v| v * scale).collect()).collect();
    Ok(KleDecomposition { params: *params, eigenvalues: values[..keep].to_vec(), eigenfunctions, total_energy: total })
}

/// Bilinear interpolation of an auxiliary-grid field at `(x, y)` in the unit square.
fn interpolate(aux: &[f64], m: usize, x: f64, y: f64) -> f64 {
    let s = (m - 1) as f64;
    let (gx, gy) = ((x * s).clamp(0.0, s), (y * s).clamp(0.0, s));
    let (i, j) = ((gx.floor() as usize).min(m - 2), (gy.floor() as usize).min(m - 2));
    let (tx, ty) = (gx - i as f64, gy - j as f64);
    let at = |a: usize, b: usize| aux[b * m + a];
    (1.0 - tx) * (1.0 - ty) * at(i, j) + tx * (1.0 - ty) * at(i + 1, j) + (1.0 - tx) * ty * at(i, j + 1) + tx * ty * at(i + 1, j + 1)
}

/// Coefficient field for explicit expansion weights `theta`.
pub fn field_from_theta(decomp: &KleDecomposition, theta: &[f64], grid: &GridPair) -> Result<CoefficientField> {
    if theta.len() != decomp.n_modes() {
        return Err(Error::Shape { expected: format!("{} KLE weights", decomp.n_modes()), got: theta.len().to_string() });
    }
    let m = decomp.params.aux_grid;
    let mut y_aux = vec![0.0; m * m];
    for ((lam, phi), t) in decomp.eigenvalues.iter().zip(&decomp.eigenfunctions).zip(theta) {
        let c = lam.sqrt() * t;
        for (y, p) in y_aux.iter_mut().zip(phi) {
            *y += c * p;
        }
    }
    let n = grid.n_fine();
    let y = NodalField::from_fn(n, n, |ix, iy| {
        let (x, yy) = grid.node_coord(ix, iy);
        interpolate(&y_aux, m, x, yy)
    });
    let lo = y.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = y.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo;
    if !(spread > 1e-12 * hi.abs().max(lo.abs()).max(1e-300)) {
        return Err(Error::DegenerateField { spread });
    }
    let a = decomp.params.contrast_target.ln();
    let values = y.values.iter().map(|v| if *v == lo { 1.0 } else if *v == hi { decomp.params.contrast_target } else { (a * (v - lo) / spread).exp() }).collect();
    CoefficientField::from_values(NodalField { nx: n, ny: n, values })
}

/// Expansion weights drawn for `seed`.
pub fn sample_theta(decomp: &KleDecomposition, seed: u64) -> Vec<f64> {
    normals(seed, streams::KLE_THETA, decomp.n_modes())
}

pub fn sample_kle_field(decomp: &KleDecomposition, seed: u64, grid: &GridPair) -> Result<CoefficientField> {
    field_from_theta(decomp, &sample_theta(decomp, seed), grid)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForcingKind {
    Unit,
    #[serde(rename = "spectral")]
    SpectralGaussian,
}

impl std::str::FromStr for ForcingKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(Self::Unit),
            "spectral" => Ok(Self::SpectralGaussian),
            other => Err(Error::Config(format!("unknown forcing kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForcingField {
    pub values: NodalField,
    pub kind: ForcingKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForcingParams {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ForcingParams {
    fn default() -> Self {
        Self { gamma: 2000.0, alpha: 1.0, beta: 0.5 }
    }
}

fn fft2(data: &mut [Complex64], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = data[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            data[y * n + x] = col[y];
        }
    }
}

/// Periodic integer wavenumber of DFT bin `j` on `n` points.
fn wavenumber(j: usize, n: usize) -> f64 {
    if j <= n / 2 {
        j as f64
    } else {
        j as f64 - n as f64
    }
}

pub fn sample_forcing(kind: ForcingKind, seed: u64, grid: &GridPair, params: &ForcingParams) -> Result<ForcingField> {
    let n = grid.n_fine();
    match kind {
        ForcingKind::Unit => Ok(ForcingField { values: NodalField::constant(n, n, 1.0), kind }),
        ForcingKind::SpectralGaussian => {
            if !(params.beta > 0.0) || !params.alpha.is_finite() || !params.gamma.is_finite() {
                return Err(Error::Config(format!("invalid forcing parameters {params:?}")));
            }
            let noise = normals(seed, streams::FORCING_NOISE, n * n);
            let mut data: Vec<Complex64> = noise.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft2(&mut data, n, false);
            let four_pi2 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;
            for ky in 0..n {
                for kx in 0..n {
                    let k2 = wavenumber(kx, n).powi(2) + wavenumber(ky, n).powi(2);
                    data[ky * n + kx] *= params.alpha * (1.0 + four_pi2 * k2).powf(-params.beta);
                }
            }
            fft2(&mut data, n, true);
            let scale = params.gamma / (n * n) as f64;
            let values = data.iter().map(|c| c.re * scale).collect();
            Ok(ForcingField { values: NodalField { nx: n, ny: n, values }, kind })
        }
    }
}
