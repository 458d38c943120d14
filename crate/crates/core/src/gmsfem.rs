//! Online stage: coarse projection, solve and reconstruction.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::fem::{dirichlet_stiffness, extend_by_zero, haverkamp_coefficient, load_vector, picard_loop, FineSolution, PicardOptions};
use crate::field::{CoefficientField, ForcingField};
use crate::grid::GridPair;
use crate::linalg::SparseSymmetricMatrix;
use crate::msbasis::RestrictionMatrix;
use crate::{Error, Result};

/// Relative Tikhonov weight of the fallback regularization.
pub const TIKHONOV_DELTA: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct CoarseSystem {
    pub a0: DMatrix<f64>,
    pub f0: Vec<f64>,
    /// Basis functions per domain, used to report rank problems by domain.
    pub n_bf: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoarseDiagnostics {
    pub dim: usize,
    /// Diagonal shift added after a failed factorization, zero otherwise.
    pub tikhonov_shift: f64,
    pub relative_residual: f64,
}

impl CoarseDiagnostics {
    pub fn regularized(&self) -> bool {
        self.tikhonov_shift > 0.0
    }
}

/// Row support of `R` as an inclusive box of interior-grid coordinates,
/// widened by one node so it also covers the support of `A ψ`.
fn support_boxes(r: &RestrictionMatrix, n_int: usize) -> Vec<Option<[usize; 4]>> {
    r.rows
        .iter()
        .map(|row| {
            let mut b: Option<[usize; 4]> = None;
            for &c in &row.cols {
                let (x, y) = (c % n_int, c / n_int);
                b = Some(match b {
                    None => [x, x, y, y],
                    Some([x0, x1, y0, y1]) => [x0.min(x), x1.max(x), y0.min(y), y1.max(y)],
                });
            }
            b.map(|[x0, x1, y0, y1]| [x0.saturating_sub(1), x1 + 1, y0.saturating_sub(1), y1 + 1])
        })
        .collect()
}

/// `A0 = R A Rᵀ`, `f0 = R b` for interior-dof `A` and `b`.
pub fn project(a: &SparseSymmetricMatrix, b: &[f64], r: &RestrictionMatrix) -> Result<CoarseSystem> {
    let n = a.dim();
    if r.n_cols != n || b.len() != n {
        return Err(Error::Shape { expected: format!("{} fine dofs", r.n_cols), got: format!("matrix {n}, vector {}", b.len()) });
    }
    let n_int = (n as f64).sqrt().round() as usize;
    let boxes = if n_int * n_int == n { Some(support_boxes(r, n_int)) } else { None };
    let full = a.to_full();
    let m = r.n_rows();
    let mut a0 = DMatrix::zeros(m, m);
    let mut w = vec![0.0; n];
    let mut touched = Vec::new();
    for i in 0..m {
        // w = A ψ_i, kept sparse through `touched`.
        for (&c, &x) in r.rows[i].cols.iter().zip(&r.rows[i].vals) {
            let (cols, vals) = full.row(c);
            for (&c2, &v) in cols.iter().zip(vals) {
                if w[c2] == 0.0 {
                    touched.push(c2);
                }
                w[c2] += v * x;
            }
        }
        for j in 0..=i {
            if let Some(bx) = &boxes {
                match (bx[i], bx[j]) {
                    (Some(p), Some(q)) if p[0] <= q[1] && q[0] <= p[1] && p[2] <= q[3] && q[2] <= p[3] => {}
                    _ => continue,
                }
            }
            let v: f64 = r.rows[j].cols.iter().zip(&r.rows[j].vals).map(|(&c, x)| w[c] * x).sum();
            a0[(i, j)] = v;
            a0[(j, i)] = v;
        }
        for &c in &touched {
            w[c] = 0.0;
        }
        touched.clear();
    }
    Ok(CoarseSystem { a0, f0: r.matvec(b), n_bf: r.n_bf })
}

/// Dense Cholesky that treats pivots below `rel_floor · max diag` as failure.
fn cholesky(a: &DMatrix<f64>, rel_floor: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let dmax = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > rel_floor * dmax) {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[(i, k)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[(k, i)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    y
}

/// Domains whose diagonal block of `A0` is numerically rank deficient.
fn rank_report(sys: &CoarseSystem) -> String {
    let m = sys.a0.nrows();
    let nb = sys.n_bf.max(1);
    let mut bad = Vec::new();
    for d in 0..m / nb {
        let block = sys.a0.view((d * nb, d * nb), (nb, nb)).into_owned();
        let eig = SymmetricEigen::new(block);
        let top = eig.eigenvalues.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
        let rank = eig.eigenvalues.iter().filter(|v| v.abs() > 1e-12 * top).count();
        if rank < nb {
            bad.push(format!("domain {d}: rank {rank}/{nb}"));
        }
    }
    if bad.is_empty() {
        format!("dimension {m}, all diagonal blocks full rank")
    } else {
        bad.join(", ")
    }
}

/// Solve `A0 u0 = f0`, regularizing with `δ·tr(A0)/dim` if the
/// factorization breaks down.
pub fn solve_coarse(sys: &CoarseSystem) -> Result<(Vec<f64>, CoarseDiagnostics)> {
    let m = sys.a0.nrows();
    if sys.f0.len() != m {
        return Err(Error::Shape { expected: m.to_string(), got: sys.f0.len().to_string() });
    }
    let floor = 64.0 * f64::EPSILON;
    let mut diag = CoarseDiagnostics { dim: m, ..Default::default() };
    let l = match cholesky(&sys.a0, floor) {
        Some(l) => l,
        None => {
            let shift = TIKHONOV_DELTA * sys.a0.trace() / m as f64;
            let mut reg = sys.a0.clone();
            for i in 0..m {
                reg[(i, i)] += shift;
            }
            diag.tikhonov_shift = shift;
            cholesky(&reg, 0.0).ok_or_else(|| Error::SingularCoarse(rank_report(sys)))?
        }
    };
    let u0 = cholesky_solve(&l, &sys.f0);
    let au = &sys.a0 * nalgebra::DVector::from_column_slice(&u0);
    let res: f64 = au.iter().zip(&sys.f0).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let fnorm = sys.f0.iter().map(|v| v * v).sum::<f64>().sqrt();
    diag.relative_residual = if fnorm > 0.0 { res / fnorm } else { 0.0 };
    Ok((u0, diag))
}

/// `u = Rᵀ u0` with the boundary reattached.
pub fn reconstruct(u0: &[f64], r: &RestrictionMatrix, grid: &GridPair) -> Result<FineSolution> {
    if u0.len() != r.n_rows() || r.n_cols != grid.n_interior() {
        return Err(Error::Shape { expected: format!("{} coarse dofs", r.n_rows()), got: u0.len().to_string() });
    }
    Ok(FineSolution { values: extend_by_zero(grid, &r.transpose_matvec(u0)), picard: None })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmsfemSolution {
    pub solution: FineSolution,
    /// One entry per coarse solve (one per Picard iteration for Richards).
    pub coarse: Vec<CoarseDiagnostics>,
}

impl GmsfemSolution {
    pub fn regularized(&self) -> bool {
        self.coarse.iter().any(|c| c.regularized())
    }
}

pub fn solve_gmsfem_diffusion(grid: &GridPair, kappa: &CoefficientField, f: &ForcingField, r: &RestrictionMatrix) -> Result<GmsfemSolution> {
    let a = dirichlet_stiffness(grid, &kappa.values)?;
    let b = load_vector(grid, &f.values)?;
    let (u0, diag) = solve_coarse(&project(&a, &b, r)?)?;
    Ok(GmsfemSolution { solution: reconstruct(&u0, r, grid)?, coarse: vec![diag] })
}

/// Picard loop on the coarse space with a fixed restriction matrix.
pub fn solve_gmsfem_richards(
    grid: &GridPair,
    kappa: &CoefficientField,
    f: &ForcingField,
    r: &RestrictionMatrix,
    picard: &PicardOptions,
) -> Result<GmsfemSolution> {
    let b = load_vector(grid, &f.values)?;
    let mut coarse = Vec::new();
    let solution = picard_loop(grid, picard, |u| {
        let coef = haverkamp_coefficient(&kappa.values, u);
        let a = dirichlet_stiffness(grid, &coef)?;
        let (u0, diag) = solve_coarse(&project(&a, &b, r)?)?;
        coarse.push(diag);
        Ok(reconstruct(&u0, r, grid)?.values)
    })?;
    Ok(GmsfemSolution { solution, coarse })
}

/// Number of online solves after which data generation and training pay
/// for themselves: `(T_data + T_train) / (T_gmsfem − T_inf)`. Infinite when
/// inference is not faster than the classical offline stage.
pub fn breakeven(t_data: f64, t_train: f64, t_inf: f64, t_gmsfem: f64) -> Result<f64> {
    let all = [t_data, t_train, t_inf, t_gmsfem];
    if all.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::Config(format!("timings must be finite and nonnegative, got {all:?}")));
    }
    if t_gmsfem <= t_inf {
        return Ok(f64::INFINITY);
    }
    Ok((t_data + t_train) / (t_gmsfem - t_inf))
}
