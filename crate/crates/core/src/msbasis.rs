//! Offline stage: local spectral problems, multiscale basis functions and
//! the restriction matrix.

use serde::{Deserialize, Serialize};

use crate::fem::{assemble_mass_weighted, assemble_stiffness};
use crate::field::CoefficientField;
use crate::grid::{partition_of_unity, GridPair, LocalDomain, NodalField, PartitionFunction, PatchBox};
use crate::linalg::{dense_generalized, dot, lanczos_generalized, norm2, LanczosOptions, SparseSymmetricMatrix};
use crate::{Error, Result};

/// Pencils up to this many dofs are solved densely.
pub const DENSE_LIMIT: usize = 160;

/// Eigenpairs computed beyond `N_bf` for spectral-gap diagnostics.
pub const EXTRA_PAIRS: usize = 4;

/// Residual and orthonormality bound enforced on every local eigenpair.
pub const EIGEN_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenMethod {
    Dense,
    Lanczos,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenDiagnostics {
    pub method: EigenMethod,
    pub dim: usize,
    /// Worst `‖Aφ − λSφ‖ / ‖Aφ‖` over the non-null pairs.
    pub max_residual: f64,
    /// `‖Aφ₁ − λ₁Sφ₁‖ / (‖A‖∞ ‖φ₁‖)` for the null pair.
    pub null_residual: f64,
    /// `max |φ_jᵀ S φ_k − δ_jk|`.
    pub s_orthonormality: f64,
    /// `λ₁ / λ₂`.
    pub null_ratio: f64,
    /// `max |φ₁ − mean| / |mean|`.
    pub constant_deviation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalEigenpairs {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    pub diagnostics: EigenDiagnostics,
}

impl LocalEigenpairs {
    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Neumann stiffness and κ-weighted mass on the domain's patch.
pub fn assemble_local_matrices(
    grid: &GridPair,
    kappa: &CoefficientField,
    domain: &LocalDomain,
) -> Result<(SparseSymmetricMatrix, SparseSymmetricMatrix)> {
    Ok((assemble_stiffness(grid, &kappa.values, &domain.patch)?, assemble_mass_weighted(grid, &kappa.values, &domain.patch)?))
}

/// The `n` smallest eigenpairs of `A φ = λ S φ` for a pure-Neumann patch
/// pencil, S-normalized, sign-fixed and verified.
pub fn solve_local_eigenproblem(a: &SparseSymmetricMatrix, s: &SparseSymmetricMatrix, n: usize) -> Result<LocalEigenpairs> {
    let dim = a.dim();
    if n == 0 || n > dim {
        return Err(Error::Config(format!("requested {n} eigenpairs of a {dim}-dof patch")));
    }
    let (pairs, method) = if dim <= DENSE_LIMIT || 3 * n > dim {
        (dense_generalized(&a.to_dense(), &s.to_dense(), n)?, EigenMethod::Dense)
    } else {
        let opts = LanczosOptions { null_vector: Some(vec![1.0; dim]), ..LanczosOptions::default() };
        (lanczos_generalized(a, s, n, &opts)?, EigenMethod::Lanczos)
    };
    let diagnostics = verify_pairs(a, s, &pairs.values, &pairs.vectors, method)?;
    Ok(LocalEigenpairs { eigenvalues: pairs.values, eigenvectors: pairs.vectors, diagnostics })
}

fn verify_pairs(
    a: &SparseSymmetricMatrix,
    s: &SparseSymmetricMatrix,
    values: &[f64],
    vectors: &[Vec<f64>],
    method: EigenMethod,
) -> Result<EigenDiagnostics> {
    let a_inf = a.norm_inf();
    let svecs: Vec<Vec<f64>> = vectors.iter().map(|v| s.matvec(v)).collect();
    let mut orth = 0.0f64;
    for (j, v) in vectors.iter().enumerate() {
        for (k, sv) in svecs.iter().enumerate() {
            let want = if j == k { 1.0 } else { 0.0 };
            orth = orth.max((dot(v, sv) - want).abs());
        }
    }
    let residual = |j: usize| {
        let av = a.matvec(&vectors[j]);
        let r = av.iter().zip(&svecs[j]).map(|(p, q)| (p - values[j] * q).powi(2)).sum::<f64>().sqrt();
        (r, norm2(&av))
    };
    let (r0, _) = residual(0);
    let null_residual = r0 / (a_inf * norm2(&vectors[0]));
    let mut max_residual = 0.0f64;
    let mut worst = 0;
    for j in 1..values.len() {
        let (r, av) = residual(j);
        let rel = r / av;
        if !(rel <= max_residual) {
            max_residual = if rel.is_nan() { f64::INFINITY } else { rel };
            worst = j;
        }
    }
    let mean = vectors[0].iter().sum::<f64>() / vectors[0].len() as f64;
    let constant_deviation = vectors[0].iter().map(|v| (v - mean).abs()).fold(0.0, f64::max) / mean.abs();
    let null_ratio = if values.len() > 1 { values[0] / values[1] } else { 0.0 };
    let diag = EigenDiagnostics {
        method,
        dim: a.dim(),
        max_residual,
        null_residual,
        s_orthonormality: orth,
        null_ratio,
        constant_deviation,
    };
    if max_residual > EIGEN_TOL {
        return Err(Error::EigenResidual { index: worst, residual: max_residual });
    }
    if orth > EIGEN_TOL || null_residual > EIGEN_TOL {
        return Err(Error::EigenResidual { index: 0, residual: orth.max(null_residual) });
    }
    Ok(diag)
}

/// Multiscale basis functions of one local domain as patch-nodal vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    pub domain_index: usize,
    pub patch: PatchBox,
    pub vectors: Vec<Vec<f64>>,
}

impl BasisSet {
    pub fn n_bf(&self) -> usize {
        self.vectors.len()
    }

    pub fn field(&self, j: usize) -> NodalField {
        NodalField { nx: self.patch.nx(), ny: self.patch.ny(), values: self.vectors[j].clone() }
    }

    /// Zero every entry that sits on the boundary of the whole domain.
    pub fn zero_outer_boundary(&mut self, grid: &GridPair) {
        let p = self.patch;
        for v in &mut self.vectors {
            for (k, x) in v.iter_mut().enumerate() {
                let (gx, gy) = p.global_node(k);
                if grid.is_boundary(gx, gy) {
                    *x = 0.0;
                }
            }
        }
    }
}

/// `ψ_j = χ ⊙ φ_j` for the `n_bf` leading eigenvectors, zero on `∂Ω`.
pub fn build_multiscale_basis(
    pairs: &LocalEigenpairs,
    chi: &PartitionFunction,
    n_bf: usize,
    grid: &GridPair,
    domain: &LocalDomain,
) -> Result<BasisSet> {
    if n_bf == 0 || n_bf > pairs.count() {
        return Err(Error::Config(format!("N_bf = {n_bf} with {} eigenpairs available", pairs.count())));
    }
    if chi.values.values.len() != domain.patch.len() {
        return Err(Error::Shape { expected: format!("{} patch values", domain.patch.len()), got: chi.values.values.len().to_string() });
    }
    let vectors = pairs.eigenvectors[..n_bf]
        .iter()
        .map(|phi| phi.iter().zip(&chi.values.values).map(|(p, c)| p * c).collect())
        .collect();
    let mut set = BasisSet { domain_index: domain.index, patch: domain.patch, vectors };
    set.zero_outer_boundary(grid);
    Ok(set)
}

/// Sparse row of the restriction matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRow {
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

/// Rows are the basis functions `ψ_j^{ω_i}` over fine interior dofs,
/// ordered by domain then `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct RestrictionMatrix {
    pub n_bf: usize,
    pub n_cols: usize,
    pub rows: Vec<SparseRow>,
}

impl RestrictionMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// `R v`
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.cols.iter().zip(&r.vals).map(|(&c, x)| x * v[c]).sum()).collect()
    }

    /// `Rᵀ u0`
    pub fn transpose_matvec(&self, u0: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for (r, &c0) in self.rows.iter().zip(u0) {
            for (&c, x) in r.cols.iter().zip(&r.vals) {
                out[c] += x * c0;
            }
        }
        out
    }
}

pub fn assemble_restriction(bases: &[BasisSet], grid: &GridPair) -> Result<RestrictionMatrix> {
    let n_bf = bases.first().map(|b| b.n_bf()).ok_or_else(|| Error::Config("no basis sets".into()))?;
    if bases.len() != grid.n_domains() {
        return Err(Error::Shape { expected: format!("{} basis sets", grid.n_domains()), got: bases.len().to_string() });
    }
    let mut rows = Vec::with_capacity(bases.len() * n_bf);
    for (i, b) in bases.iter().enumerate() {
        if b.n_bf() != n_bf {
            return Err(Error::Config(format!("domain {i} has {} basis functions, expected {n_bf}", b.n_bf())));
        }
        if b.domain_index != i || b.patch != grid.local_domain(i).patch {
            return Err(Error::Config(format!("basis set {i} belongs to domain {} with a different patch", b.domain_index)));
        }
        for v in &b.vectors {
            if v.len() != b.patch.len() {
                return Err(Error::Shape { expected: format!("{} patch values", b.patch.len()), got: v.len().to_string() });
            }
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            for (k, &x) in v.iter().enumerate() {
                let (gx, gy) = b.patch.global_node(k);
                if let Some(c) = grid.interior_index(gx, gy) {
                    if x != 0.0 {
                        cols.push(c);
                        vals.push(x);
                    }
                }
            }
            rows.push(SparseRow { cols, vals });
        }
    }
    Ok(RestrictionMatrix { n_bf, n_cols: grid.n_interior(), rows })
}

/// Classical offline stage for one domain.
pub fn exact_domain_basis(
    grid: &GridPair,
    kappa: &CoefficientField,
    domain: &LocalDomain,
    n_bf: usize,
) -> Result<(BasisSet, LocalEigenpairs)> {
    let (a, s) = assemble_local_matrices(grid, kappa, domain)?;
    let pairs = solve_local_eigenproblem(&a, &s, (n_bf + EXTRA_PAIRS).min(a.dim()))?;
    let set = build_multiscale_basis(&pairs, &partition_of_unity(grid, domain), n_bf, grid, domain)?;
    Ok((set, pairs))
}

/// Anything that can supply the multiscale basis of a local domain.
pub trait BasisPredictor {
    fn n_bf(&self) -> usize;

    fn predict_domain(&self, grid: &GridPair, kappa: &CoefficientField, domain: &LocalDomain) -> Result<BasisSet>;

    /// One basis set per local domain, in domain order.
    fn predict(&self, grid: &GridPair, kappa: &CoefficientField) -> Result<Vec<BasisSet>> {
        grid.local_domains().iter().map(|d| self.predict_domain(grid, kappa, d)).collect()
    }
}

/// Predictor that runs the local eigensolve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactBasis {
    pub n_bf: usize,
}

impl BasisPredictor for ExactBasis {
    fn n_bf(&self) -> usize {
        self.n_bf
    }

    fn predict_domain(&self, grid: &GridPair, kappa: &CoefficientField, domain: &LocalDomain) -> Result<BasisSet> {
        Ok(exact_domain_basis(grid, kappa, domain, self.n_bf)?.0)
    }
}

/// Full offline stage with per-domain eigen diagnostics.
pub fn offline_basis(grid: &GridPair, kappa: &CoefficientField, n_bf: usize) -> Result<(Vec<BasisSet>, Vec<EigenDiagnostics>)> {
    let mut sets = Vec::with_capacity(grid.n_domains());
    let mut diags = Vec::with_capacity(grid.n_domains());
    for d in grid.local_domains() {
        let (set, pairs) = exact_domain_basis(grid, kappa, &d, n_bf)?;
        sets.push(set);
        diags.push(pairs.diagnostics);
    }
    Ok((sets, diags))
}
