//! Subspace algebra and basis-alignment losses.
//!
//! Bases are `n x k` matrices whose columns are basis vectors over a patch's
//! nodal dofs.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::msbasis::BasisSet;
use crate::rng::{mix, normals, streams};
use crate::{Error, Result};

/// Relative threshold on the Gram-Schmidt diagonal below which a column is
/// treated as dependent.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct OrthonormalBasis {
    /// `n x k` with orthonormal columns. Slots listed in `deficient` hold
    /// completion directions orthogonal to everything else.
    pub q: DMatrix<f64>,
    pub rank: usize,
    pub deficient: Vec<usize>,
    /// Upper-triangular factor with `input = q r` on the full-rank columns.
    pub r: DMatrix<f64>,
}

impl OrthonormalBasis {
    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn k(&self) -> usize {
        self.q.ncols()
    }

    pub fn is_full_rank(&self) -> bool {
        self.deficient.is_empty()
    }

    /// Columns spanning the input's column space.
    pub fn effective(&self) -> DMatrix<f64> {
        let keep: Vec<usize> = (0..self.k()).filter(|j| !self.deficient.contains(j)).collect();
        self.q.select_columns(&keep)
    }
}

pub fn basis_matrix(vectors: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = vectors.first().map(|v| v.len()).ok_or_else(|| Error::ZeroVector("empty basis".into()))?;
    if let Some(v) = vectors.iter().find(|v| v.len() != n) {
        return Err(Error::Shape { expected: format!("{n} entries per vector"), got: v.len().to_string() });
    }
    Ok(DMatrix::from_fn(n, vectors.len(), |i, j| vectors[j][i]))
}

/// Thin QR by Gram-Schmidt with reorthogonalization. Dependent columns are
/// flagged and replaced by unit directions orthogonal to the rest.
pub fn orthonormalize(a: &DMatrix<f64>) -> Result<OrthonormalBasis> {
    let (n, k) = a.shape();
    let scale = (0..k).map(|j| a.column(j).norm()).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::ZeroVector(format!("basis of {k} vectors has no nonzero finite column")));
    }
    if k > n {
        return Err(Error::Shape { expected: format!("at most {n} vectors"), got: k.to_string() });
    }
    let mut q = DMatrix::zeros(n, k);
    let mut r = DMatrix::zeros(k, k);
    let mut deficient = Vec::new();
    for j in 0..k {
        let mut v = a.column(j).into_owned();
        for _ in 0..2 {
            for i in 0..j {
                if deficient.contains(&i) {
                    continue;
                }
                let c = q.column(i).dot(&v);
                r[(i, j)] += c;
                v.axpy(-c, &q.column(i), 1.0);
            }
        }
        let nrm = v.norm();
        if nrm <= RANK_TOL * scale {
            deficient.push(j);
        } else {
            r[(j, j)] = nrm;
            q.set_column(j, &(v / nrm));
        }
    }
    // Completion directions for the dependent slots.
    let mut e = 0;
    for &j in &deficient {
        loop {
            let mut v = nalgebra::DVector::zeros(n);
            v[e % n] = 1.0;
            e += 1;
            for _ in 0..2 {
                for i in 0..k {
                    let c = q.column(i).dot(&v);
                    v.axpy(-c, &q.column(i), 1.0);
                }
            }
            let nrm = v.norm();
            if nrm > 0.5 {
                q.set_column(j, &(v / nrm));
                break;
            }
            if e > 2 * n {
                return Err(Error::SelfCheck("no completion direction found".into()));
            }
        }
    }
    Ok(OrthonormalBasis { q, rank: k - deficient.len(), deficient, r })
}

pub fn orthonormalize_set(basis: &BasisSet) -> Result<OrthonormalBasis> {
    orthonormalize(&basis_matrix(&basis.vectors)?)
}

fn same_space(t: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<()> {
    if t.shape() != p.shape() {
        return Err(Error::Shape { expected: format!("{:?}", t.shape()), got: format!("{:?}", p.shape()) });
    }
    Ok(())
}

/// `k − ‖Q_tᵀ Q_p‖_F²`, clamped at zero.
pub fn sal_loss(target: &OrthonormalBasis, predicted: &OrthonormalBasis) -> Result<f64> {
    same_space(&target.q, &predicted.q)?;
    let m = target.q.transpose() * &predicted.q;
    Ok((target.k() as f64 - m.norm_squared()).max(0.0))
}

/// Random test vectors `v = Σ c_k ψ_k` built from the raw target basis.
pub fn projection_vectors(target_basis: &DMatrix<f64>, n_vectors: usize, seed: u64) -> DMatrix<f64> {
    let k = target_basis.ncols();
    let c = normals(seed, streams::PROJECTION_VECTORS, k * n_vectors);
    target_basis * DMatrix::from_vec(k, n_vectors, c)
}

/// Mean `‖(P_t − P_p) v‖²` over the columns of `v`.
pub fn projection_penalty(target: &OrthonormalBasis, predicted: &OrthonormalBasis, v: &DMatrix<f64>) -> f64 {
    let pt = &target.q * (target.q.transpose() * v);
    let pp = &predicted.q * (predicted.q.transpose() * v);
    (pt - pp).norm_squared() / v.ncols() as f64
}

pub fn sal_pr_loss(
    target: &OrthonormalBasis,
    predicted: &OrthonormalBasis,
    target_basis: &BasisSet,
    lambda: f64,
    n_vectors: usize,
    seed: u64,
) -> Result<f64> {
    if n_vectors == 0 || !(lambda >= 0.0) {
        return Err(Error::Config(format!("SAL-PR needs n_vectors >= 1 and lambda >= 0, got {n_vectors}, {lambda}")));
    }
    let sal = sal_loss(target, predicted)?;
    let v = projection_vectors(&basis_matrix(&target_basis.vectors)?, n_vectors, seed);
    if v.nrows() != target.dim() {
        return Err(Error::Shape { expected: target.dim().to_string(), got: v.nrows().to_string() });
    }
    Ok(sal + lambda * projection_penalty(target, predicted, &v))
}

fn rbfl2_terms(target: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<Vec<(f64, f64, f64)>> {
    same_space(target, predicted)?;
    (0..target.ncols())
        .map(|j| {
            let t = target.column(j);
            let p = predicted.column(j);
            let n2 = t.norm_squared();
            if !(n2 > 0.0) {
                return Err(Error::ZeroVector(format!("target basis vector {j}")));
            }
            let minus = (p - t).norm_squared() / n2;
            let plus = (p + t).norm_squared() / n2;
            Ok((minus, plus, n2))
        })
        .collect()
}

/// Mean over columns of `min(‖ψ − ψ̃‖², ‖ψ + ψ̃‖²) / ‖ψ‖²`.
pub fn rbfl2_loss(target: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<f64> {
    let terms = rbfl2_terms(target, predicted)?;
    Ok(terms.iter().map(|(m, p, _)| m.min(*p)).sum::<f64>() / terms.len() as f64)
}

pub fn rbfl2_loss_sets(target: &BasisSet, predicted: &BasisSet) -> Result<f64> {
    rbfl2_loss(&basis_matrix(&target.vectors)?, &basis_matrix(&predicted.vectors)?)
}

/// Loss value and gradient with respect to the raw predicted basis.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: DMatrix<f64>,
    /// The prediction was rank deficient; the gradient is zero.
    pub rank_deficient: bool,
}

pub fn rbfl2_grad(target: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<LossGrad> {
    let terms = rbfl2_terms(target, predicted)?;
    let k = terms.len() as f64;
    let mut grad = DMatrix::zeros(predicted.nrows(), predicted.ncols());
    for (j, (minus, plus, n2)) in terms.iter().enumerate() {
        let sign = if minus <= plus { -1.0 } else { 1.0 };
        let g = (predicted.column(j) + target.column(j) * sign) * (2.0 / (k * n2));
        grad.set_column(j, &g);
    }
    Ok(LossGrad { loss: terms.iter().map(|(m, p, _)| m.min(*p)).sum::<f64>() / k, grad, rank_deficient: false })
}

/// `B R⁻ᵀ` for upper-triangular `R`, via `R Xᵀ = Bᵀ`.
fn right_solve_rt(b: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    r.solve_upper_triangular(&b.transpose()).expect("nonsingular R").transpose()
}

/// SAL and its gradient with respect to the raw (non-orthonormal)
/// predicted basis `psi`.
pub fn sal_grad(target: &OrthonormalBasis, psi: &DMatrix<f64>) -> Result<LossGrad> {
    let pred = orthonormalize(psi)?;
    same_space(&target.q, &pred.q)?;
    if !pred.is_full_rank() {
        let qt = target.q.clone();
        let m = qt.transpose() * pred.effective();
        let loss = (target.k() as f64 - m.norm_squared()).max(0.0);
        return Ok(LossGrad { loss, grad: DMatrix::zeros(psi.nrows(), psi.ncols()), rank_deficient: true });
    }
    let (qt, qp) = (&target.q, &pred.q);
    let m = qt.transpose() * qp;
    let loss = (target.k() as f64 - m.norm_squared()).max(0.0);
    let t = qt * &m;
    let comp = &t - qp * (qp.transpose() * &t);
    let grad = right_solve_rt(&comp, &pred.r) * -2.0;
    Ok(LossGrad { loss, grad, rank_deficient: false })
}

/// SAL-PR and its gradient. `v` holds the test vectors as columns.
pub fn sal_pr_grad(target: &OrthonormalBasis, psi: &DMatrix<f64>, v: &DMatrix<f64>, lambda: f64) -> Result<LossGrad> {
    let mut out = sal_grad(target, psi)?;
    if out.rank_deficient {
        return Ok(out);
    }
    let pred = orthonormalize(psi)?;
    let (qt, qp) = (&target.q, &pred.q);
    let nv = v.ncols() as f64;
    let mut penalty = 0.0;
    let mut g = DMatrix::zeros(psi.nrows(), psi.ncols());
    for c in 0..v.ncols() {
        let v = v.column(c).into_owned();
        let pv = qp * (qp.transpose() * &v);
        let w = qt * (qt.transpose() * &v) - &pv;
        penalty += w.norm_squared();
        let e = &v - &pv;
        let iw = &w - qp * (qp.transpose() * &w);
        // a = G⁻¹Ψᵀv = R⁻¹Qᵀv, b = R⁻¹Qᵀw.
        let a = pred.r.solve_upper_triangular(&(qp.transpose() * &v)).expect("nonsingular R");
        let b = pred.r.solve_upper_triangular(&(qp.transpose() * &w)).expect("nonsingular R");
        g -= (&iw * a.transpose() + &e * b.transpose()) * 2.0;
    }
    out.loss += lambda * penalty / nv;
    out.grad += g * (lambda / nv);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrassmannReport {
    pub distance: f64,
    /// `(1/√2) ‖P_t − P_p‖_F`, computed independently.
    pub projector_distance: f64,
    pub rank_deficient: bool,
}

/// Grassmann distance via principal-angle overlap, cross-checked against
/// the projector formula.
pub fn grassmann_distance(target: &OrthonormalBasis, predicted: &OrthonormalBasis) -> Result<GrassmannReport> {
    same_space(&target.q, &predicted.q)?;
    let (qt, qp) = (target.effective(), predicted.effective());
    let (kt, kp) = (qt.ncols() as f64, qp.ncols() as f64);
    let overlap = (qt.transpose() * &qp).norm_squared();
    let distance = (0.5 * (kt + kp) - overlap).max(0.0).sqrt();
    let diff = &qt * qt.transpose() - &qp * qp.transpose();
    let projector_distance = diff.norm() / std::f64::consts::SQRT_2;
    // Compared on squares: near zero the square root amplifies round-off.
    if (distance.powi(2) - projector_distance.powi(2)).abs() > 1e-8 {
        return Err(Error::SelfCheck(format!("Grassmann formulas disagree: {distance} vs {projector_distance}")));
    }
    Ok(GrassmannReport { distance, projector_distance, rank_deficient: !(target.is_full_rank() && predicted.is_full_rank()) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangleDiagnostic {
    /// `‖u − Q_p c‖` with `c = Q_tᵀ u`.
    pub lhs: f64,
    /// `‖u − Q_t c‖ + ‖Q_t c − Q_p c‖`.
    pub rhs: f64,
    /// `‖u − Q_t c‖² + ‖Q_t c − Q_p c‖²`.
    pub squared_sum: f64,
    /// Whether `lhs² ≤ squared_sum` happened to hold for this input.
    pub squared_form_holds: bool,
}

pub fn triangle_diagnostic(u: &[f64], target: &OrthonormalBasis, predicted: &OrthonormalBasis) -> Result<TriangleDiagnostic> {
    same_space(&target.q, &predicted.q)?;
    if u.len() != target.dim() {
        return Err(Error::Shape { expected: target.dim().to_string(), got: u.len().to_string() });
    }
    let u = nalgebra::DVector::from_column_slice(u);
    let c = target.q.transpose() * &u;
    let (tc, pc) = (&target.q * &c, &predicted.q * &c);
    let a = (&u - &tc).norm();
    let b = (&tc - &pc).norm();
    let lhs = (&u - &pc).norm();
    let squared_sum = a * a + b * b;
    Ok(TriangleDiagnostic { lhs, rhs: a + b, squared_sum, squared_form_holds: lhs * lhs <= squared_sum * (1.0 + 1e-12) })
}

/// Seed of the test-vector draw for one (sample, step) pair.
pub fn projection_seed(seed: u64, step: u64, sample: u64) -> u64 {
    mix(mix(seed, step), sample)
}
