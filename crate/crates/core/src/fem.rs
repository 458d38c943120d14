//! P1 finite elements on the fine grid.
//!
//! Each fine square `[ix, ix+1] x [iy, iy+1]` is split along its
//! bottom-left to top-right diagonal into two triangles. Coefficients are
//! nodal; each triangle uses the mean of its three vertex values.

use serde::{Deserialize, Serialize};

use crate::field::{CoefficientField, ForcingField};
use crate::grid::{GridPair, NodalField, PatchBox};
use crate::linalg::{dot, BandedCholesky, SparseSymmetricMatrix};
use crate::{Error, Result};

pub use crate::linalg::SparseSymmetricMatrix as Matrix;

/// Triangles of one fine square, as `(dx, dy)` vertex offsets.
const TRIANGLES: [[(usize, usize); 3]; 2] = [[(0, 0), (1, 0), (1, 1)], [(0, 0), (1, 1), (0, 1)]];

/// Element stiffness for a unit-coefficient right triangle of a square cell.
/// The matrices do not depend on `h` in 2D.
fn element_stiffness(tri: &[(usize, usize); 3]) -> [[f64; 3]; 3] {
    let p: Vec<(f64, f64)> = tri.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
    let area2 = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1);
    // grad of barycentric λ_a = (y_b - y_c, x_c - x_b) / (2 area)
    let grads: Vec<(f64, f64)> = (0..3)
        .map(|a| {
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            ((p[b].1 - p[c].1) / area2, (p[c].0 - p[b].0) / area2)
        })
        .collect();
    let area = area2.abs() / 2.0;
    let mut k = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            k[a][b] = area * (grads[a].0 * grads[b].0 + grads[a].1 * grads[b].1);
        }
    }
    k
}

fn check_positive(coef: &NodalField) -> Result<()> {
    match coef.values.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        Some(node) => Err(Error::NonPositiveCoefficient { node, value: coef.values[node] }),
        None => Ok(()),
    }
}

enum Form {
    Stiffness,
    Mass,
}

/// Assemble over the triangles inside `region`. Rows are numbered row-major
/// over the region's nodes. `coef = None` means a unit coefficient.
fn assemble(grid: &GridPair, coef: Option<&NodalField>, region: &PatchBox, form: Form) -> Result<SparseSymmetricMatrix> {
    if let Some(c) = coef {
        c.expect_shape(grid.n_fine(), grid.n_fine())?;
        check_positive(c)?;
    }
    if region.x1 >= grid.n_fine() || region.y1 >= grid.n_fine() {
        return Err(Error::Shape { expected: format!("region inside {0}x{0}", grid.n_fine()), got: format!("{region:?}") });
    }
    let h = grid.fine_h();
    let local: [[[f64; 3]; 3]; 2] = match form {
        Form::Stiffness => [element_stiffness(&TRIANGLES[0]), element_stiffness(&TRIANGLES[1])],
        Form::Mass => {
            let area = h * h / 2.0;
            let m = [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]].map(|r| r.map(|v| v * area / 12.0));
            [m, m]
        }
    };
    let n_cells = (region.nx() - 1) * (region.ny() - 1);
    let mut trip = Vec::with_capacity(n_cells * 2 * 6);
    for iy in region.y0..region.y1 {
        for ix in region.x0..region.x1 {
            for (t, tri) in TRIANGLES.iter().enumerate() {
                let nodes = tri.map(|(dx, dy)| (ix + dx, iy + dy));
                let kbar = match coef {
                    Some(c) => nodes.iter().map(|&(x, y)| c.get(x, y)).sum::<f64>() / 3.0,
                    None => 1.0,
                };
                let idx = nodes.map(|(x, y)| region.local_index(x, y));
                for a in 0..3 {
                    for b in 0..=a {
                        let (i, j) = (idx[a], idx[b]);
                        trip.push((i.max(j), i.min(j), kbar * local[t][a][b]));
                    }
                }
            }
        }
    }
    Ok(SparseSymmetricMatrix::from_triplets(region.len(), trip))
}

/// `∫ κ ∇v·∇w` with natural boundary conditions on `region`.
pub fn assemble_stiffness(grid: &GridPair, kappa: &NodalField, region: &PatchBox) -> Result<SparseSymmetricMatrix> {
    assemble(grid, Some(kappa), region, Form::Stiffness)
}

/// `∫ κ v w` on `region`.
pub fn assemble_mass_weighted(grid: &GridPair, kappa: &NodalField, region: &PatchBox) -> Result<SparseSymmetricMatrix> {
    assemble(grid, Some(kappa), region, Form::Mass)
}

/// Unweighted stiffness (`κ ≡ 1`).
pub fn assemble_laplace(grid: &GridPair, region: &PatchBox) -> SparseSymmetricMatrix {
    assemble(grid, None, region, Form::Stiffness).expect("unit coefficient is valid")
}

/// Unweighted P1 mass matrix.
pub fn assemble_mass(grid: &GridPair, region: &PatchBox) -> SparseSymmetricMatrix {
    assemble(grid, None, region, Form::Mass).expect("unit coefficient is valid")
}

/// Map from whole-grid node index to interior unknown index.
pub fn interior_map(grid: &GridPair) -> Vec<Option<usize>> {
    let n = grid.n_fine();
    (0..n * n).map(|k| grid.interior_index(k % n, k / n)).collect()
}

/// Interior block of a whole-grid matrix: homogeneous Dirichlet elimination.
pub fn restrict_to_interior(grid: &GridPair, a: &SparseSymmetricMatrix) -> SparseSymmetricMatrix {
    a.restrict(&interior_map(grid), grid.n_interior())
}

pub fn interior_values(grid: &GridPair, whole: &[f64]) -> Vec<f64> {
    let map = interior_map(grid);
    let mut out = vec![0.0; grid.n_interior()];
    for (k, m) in map.iter().enumerate() {
        if let Some(i) = m {
            out[*i] = whole[k];
        }
    }
    out
}

/// Scatter interior values into a whole-grid field with zero boundary.
pub fn extend_by_zero(grid: &GridPair, interior: &[f64]) -> NodalField {
    let n = grid.n_fine();
    let mut values = vec![0.0; n * n];
    for (k, m) in interior_map(grid).iter().enumerate() {
        if let Some(i) = m {
            values[k] = interior[*i];
        }
    }
    NodalField { nx: n, ny: n, values }
}

/// Consistent P1 load vector `M f` on interior unknowns.
pub fn load_vector(grid: &GridPair, f: &NodalField) -> Result<Vec<f64>> {
    f.expect_shape(grid.n_fine(), grid.n_fine())?;
    let m = assemble_mass(grid, &grid.whole());
    Ok(interior_values(grid, &m.matvec(&f.values)))
}

/// Interior Dirichlet stiffness with a nodal coefficient.
pub fn dirichlet_stiffness(grid: &GridPair, coef: &NodalField) -> Result<SparseSymmetricMatrix> {
    Ok(restrict_to_interior(grid, &assemble_stiffness(grid, coef, &grid.whole())?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardDiagnostics {
    pub iterations: usize,
    pub final_update: f64,
    pub converged: bool,
    /// Relative update norm of each iteration.
    pub updates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FineSolution {
    pub values: NodalField,
    pub picard: Option<PicardDiagnostics>,
}

/// Haverkamp-type coefficient `κ / (1 + |u|)` at every node.
pub fn haverkamp_coefficient(kappa: &NodalField, u: &NodalField) -> NodalField {
    let values = kappa.values.iter().zip(&u.values).map(|(k, v)| k / (1.0 + v.abs())).collect();
    NodalField { nx: kappa.nx, ny: kappa.ny, values }
}

fn solve_dirichlet(grid: &GridPair, coef: &NodalField, b: &[f64]) -> Result<Vec<f64>> {
    let a = dirichlet_stiffness(grid, coef)?;
    let chol = BandedCholesky::factor(&a)?;
    Ok(chol.solve(b))
}

/// Linear diffusion `−∇·(κ∇u) = f`, `u = 0` on the boundary.
pub fn solve_fine_diffusion(grid: &GridPair, kappa: &CoefficientField, f: &ForcingField) -> Result<FineSolution> {
    let b = load_vector(grid, &f.values)?;
    let u = solve_dirichlet(grid, &kappa.values, &b)?;
    Ok(FineSolution { values: extend_by_zero(grid, &u), picard: None })
}

/// Relative change `‖new − old‖ / ‖new‖`, zero when both vanish.
pub fn relative_update(new: &[f64], old: &[f64]) -> f64 {
    let diff: f64 = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let nrm = dot(new, new).sqrt();
    if nrm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / nrm
    }
}

/// Generic Picard loop: `step(u_k) -> u_{k+1}` on whole-grid fields.
pub(crate) fn picard_loop(
    grid: &GridPair,
    opts: &PicardOptions,
    mut step: impl FnMut(&NodalField) -> Result<NodalField>,
) -> Result<FineSolution> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Config(format!("invalid Picard options {opts:?}")));
    }
    let n = grid.n_fine();
    let mut u = NodalField::constant(n, n, 0.0);
    let mut updates = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let next = step(&u)?;
        let upd = relative_update(&next.values, &u.values);
        updates.push(upd);
        u = next;
        if upd <= opts.tol {
            converged = true;
            break;
        }
    }
    let diag = PicardDiagnostics {
        iterations: updates.len(),
        final_update: *updates.last().unwrap_or(&0.0),
        converged,
        updates,
    };
    Ok(FineSolution { values: u, picard: Some(diag) })
}

/// Steady Richards equation with `κ(x, u) = κ(x) / (1 + |u|)` by Picard
/// iteration from `u = 0`.
pub fn solve_fine_richards(
    grid: &GridPair,
    kappa: &CoefficientField,
    f: &ForcingField,
    picard: &PicardOptions,
) -> Result<FineSolution> {
    let b = load_vector(grid, &f.values)?;
    picard_loop(grid, picard, |u| {
        let coef = haverkamp_coefficient(&kappa.values, u);
        Ok(extend_by_zero(grid, &solve_dirichlet(grid, &coef, &b)?))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeErrors {
    pub l2: f64,
    pub h1: f64,
}

/// Precomputed unweighted mass and stiffness for error metrics on one grid.
pub struct ErrorNorms {
    mass: SparseSymmetricMatrix,
    laplace: SparseSymmetricMatrix,
    n_fine: usize,
}

impl ErrorNorms {
    pub fn new(grid: &GridPair) -> Self {
        Self { mass: assemble_mass(grid, &grid.whole()), laplace: assemble_laplace(grid, &grid.whole()), n_fine: grid.n_fine() }
    }

    pub fn relative(&self, reference: &NodalField, approx: &NodalField) -> Result<RelativeErrors> {
        reference.expect_shape(self.n_fine, self.n_fine)?;
        approx.expect_shape(self.n_fine, self.n_fine)?;
        let diff: Vec<f64> = reference.values.iter().zip(&approx.values).map(|(a, b)| a - b).collect();
        let l2_ref = self.mass.bilinear(&reference.values, &reference.values);
        let h1_ref = self.laplace.bilinear(&reference.values, &reference.values);
        if !(l2_ref > 0.0) || !(h1_ref > 0.0) {
            return Err(Error::UndefinedMetric("reference solution has zero norm".into()));
        }
        let l2 = (self.mass.bilinear(&diff, &diff).max(0.0) / l2_ref).sqrt();
        let h1 = (self.laplace.bilinear(&diff, &diff).max(0.0) / h1_ref).sqrt();
        Ok(RelativeErrors { l2, h1 })
    }
}

/// Relative L2 and H1-seminorm errors of `u` against `u_ref`.
pub fn relative_errors(u_ref: &FineSolution, u: &FineSolution, grid: &GridPair) -> Result<RelativeErrors> {
    ErrorNorms::new(grid).relative(&u_ref.values, &u.values)
}
