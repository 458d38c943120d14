//! Generalized symmetric-definite eigenproblems `A x = λ S x`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::linalg::{axpy, dot, norm2, BandedCholesky, SparseSymmetricMatrix};
use crate::{rng, Error, Result};

/// Eigenpairs sorted by ascending eigenvalue, vectors `S`-orthonormal.
#[derive(Clone, Debug, PartialEq)]
pub struct GenEigenpairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

impl GenEigenpairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Stable ascending sort, then fix each sign so the entry of largest
    /// magnitude (lowest index on ties) is positive.
    fn normalize_order_and_sign(mut self) -> Self {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]).then(a.cmp(&b)));
        self.values = order.iter().map(|&k| self.values[k]).collect();
        self.vectors = order.iter().map(|&k| std::mem::take(&mut self.vectors[k])).collect();
        for v in &mut self.vectors {
            let mut best = 0;
            for (k, x) in v.iter().enumerate() {
                if x.abs() > v[best].abs() {
                    best = k;
                }
            }
            if v[best] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        self
    }
}

/// Dense path: `S = L L^T`, symmetric eigensolve of `L^{-1} A L^{-T}`,
/// back-transform. Returns the `nev` smallest pairs.
pub fn dense_generalized(a: &DMatrix<f64>, s: &DMatrix<f64>, nev: usize) -> Result<GenEigenpairs> {
    let n = a.nrows();
    if a.ncols() != n || s.shape() != (n, n) {
        return Err(Error::Shape { expected: format!("{n}x{n}"), got: format!("{:?} / {:?}", a.shape(), s.shape()) });
    }
    if nev > n {
        return Err(Error::Config(format!("requested {nev} eigenpairs of a {n}-dimensional pencil")));
    }
    let chol = nalgebra::Cholesky::new(s.clone()).ok_or(Error::Factorization { pivot: 0, value: f64::NAN })?;
    let l = chol.l();
    // C = L^{-1} A L^{-T}
    let y = l.solve_lower_triangular(a).ok_or(Error::Factorization { pivot: 0, value: 0.0 })?;
    let c = l.solve_lower_triangular(&y.transpose()).ok_or(Error::Factorization { pivot: 0, value: 0.0 })?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let z = l.transpose().solve_upper_triangular(&eig.eigenvectors).ok_or(Error::Factorization { pivot: 0, value: 0.0 })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| eig.eigenvalues[p].total_cmp(&eig.eigenvalues[q]).then(p.cmp(&q)));
    let pairs = GenEigenpairs {
        values: order[..nev].iter().map(|&k| eig.eigenvalues[k]).collect(),
        vectors: order[..nev].iter().map(|&k| z.column(k).iter().copied().collect()).collect(),
    };
    Ok(s_normalize(pairs, |x| s * nalgebra::DVector::from_column_slice(x)).normalize_order_and_sign())
}

fn s_normalize(mut pairs: GenEigenpairs, s_apply: impl Fn(&[f64]) -> nalgebra::DVector<f64>) -> GenEigenpairs {
    for v in &mut pairs.vectors {
        let sv = s_apply(v);
        let nrm = dot(v, sv.as_slice()).sqrt();
        v.iter_mut().for_each(|x| *x /= nrm);
    }
    pairs
}

#[derive(Clone, Debug)]
pub struct LanczosOptions {
    /// Positive shift `σ` of the factored operator `A + σ S`; `None` picks a
    /// small multiple of `tr(A) / tr(S)`.
    pub shift: Option<f64>,
    /// Required relative residual `‖Ax − λSx‖ / ‖Ax‖` per returned pair.
    pub tol: f64,
    /// Pairs whose normwise backward error
    /// `‖Ax − λSx‖ / ((‖A‖∞ + |λ| ‖S‖∞) ‖x‖)` reaches this level are accepted
    /// once the relative residual stops improving.
    pub normwise_floor: f64,
    /// A vector known to lie in the null space of `A` (for example the
    /// constant vector of a pure-Neumann stiffness matrix). It is returned as
    /// the first pair and deflated from the Krylov space.
    pub null_vector: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self { shift: None, tol: 1e-10, normwise_floor: 1e-14, null_vector: None, seed: 0x5EED }
    }
}

/// Shift-invert Lanczos in the `S` inner product with full
/// reorthogonalization; returns the `nev` smallest eigenpairs.
pub fn lanczos_generalized(
    a: &SparseSymmetricMatrix,
    s: &SparseSymmetricMatrix,
    nev: usize,
    opts: &LanczosOptions,
) -> Result<GenEigenpairs> {
    let n = a.dim();
    if s.dim() != n {
        return Err(Error::Shape { expected: n.to_string(), got: s.dim().to_string() });
    }
    if nev == 0 || nev > n {
        return Err(Error::Config(format!("requested {nev} eigenpairs of a {n}-dimensional pencil")));
    }
    let tr_a: f64 = a.diagonal().iter().sum();
    let tr_s: f64 = s.diagonal().iter().sum();
    let shift = opts.shift.unwrap_or(1e-6 * tr_a / tr_s);
    let k = a.add_scaled(s, shift)?;
    let chol = BandedCholesky::factor(&k)?;

    // Deflated directions and their S-images.
    let mut null_pair = None;
    let mut defl: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    if let Some(z) = &opts.null_vector {
        let sz = s.matvec(z);
        let nrm = dot(z, &sz).sqrt();
        let z: Vec<f64> = z.iter().map(|x| x / nrm).collect();
        let sz: Vec<f64> = sz.iter().map(|x| x / nrm).collect();
        let lambda = a.bilinear(&z, &z);
        null_pair = Some((lambda, z.clone()));
        defl.push((z, sz));
    }
    let want = nev - null_pair.is_some() as usize;
    let max_dim = n - defl.len();

    let mut ritz: Vec<(f64, Vec<f64>)> = Vec::new();
    if want > 0 {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut sbasis: Vec<Vec<f64>> = Vec::new();
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut restarts = 0u64;
        let mut next_check = (2 * want + 10).max(24).min(max_dim);
        let (mut q, mut sq) = fresh_direction(s, &defl, &basis, &sbasis, n, opts.seed, restarts)?;
        loop {
            let mut w = chol.solve(&sq);
            let a_j = dot(&sq, &w);
            alpha.push(a_j);
            axpy(-a_j, &q, &mut w);
            if let (Some(prev), Some(&b)) = (basis.last(), beta.last()) {
                axpy(-b, prev, &mut w);
            }
            basis.push(q);
            sbasis.push(sq);
            reorthogonalize(&mut w, &defl, &basis, &sbasis);

            let m = basis.len();
            if m >= next_check || m == max_dim {
                let (pairs, worst) = ritz_pairs(a, s, &basis, &alpha, &beta, want, opts.tol, opts.normwise_floor);
                if worst.1 <= 1.0 || m == max_dim {
                    if worst.1 > 1.0 {
                        return Err(Error::EigenResidual { index: worst.0, residual: worst.1 * opts.tol });
                    }
                    ritz = pairs;
                    break;
                }
                next_check = (m + m / 2).min(max_dim);
            }

            let mut sw = s.matvec(&w);
            let b = dot(&w, &sw).max(0.0).sqrt();
            let scale = alpha.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
            if b <= 1e-12 * scale || !b.is_finite() {
                // Invariant subspace found: continue from a new direction.
                restarts += 1;
                beta.push(0.0);
                (q, sq) = fresh_direction(s, &defl, &basis, &sbasis, n, opts.seed, restarts)?;
            } else {
                beta.push(b);
                w.iter_mut().for_each(|x| *x /= b);
                sw.iter_mut().for_each(|x| *x /= b);
                (q, sq) = (w, sw);
            }
        }
    }

    let mut values = Vec::with_capacity(nev);
    let mut vectors = Vec::with_capacity(nev);
    if let Some((l, v)) = null_pair {
        values.push(l);
        vectors.push(v);
    }
    for (l, v) in ritz {
        values.push(l);
        vectors.push(v);
    }
    Ok(GenEigenpairs { values, vectors }.normalize_order_and_sign())
}

/// Two passes of classical Gram-Schmidt in the `S` inner product.
fn reorthogonalize(w: &mut [f64], defl: &[(Vec<f64>, Vec<f64>)], basis: &[Vec<f64>], sbasis: &[Vec<f64>]) {
    for _ in 0..2 {
        for (v, sv) in defl.iter().map(|(v, sv)| (v, sv)).chain(basis.iter().zip(sbasis)) {
            let c = dot(sv, w);
            axpy(-c, v, w);
        }
    }
}

fn fresh_direction(
    s: &SparseSymmetricMatrix,
    defl: &[(Vec<f64>, Vec<f64>)],
    basis: &[Vec<f64>],
    sbasis: &[Vec<f64>],
    n: usize,
    seed: u64,
    attempt: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    for k in 0..8 {
        let mut q = rng::normals(rng::mix(seed, attempt * 8 + k), 0, n);
        let before = norm2(&q);
        reorthogonalize(&mut q, defl, basis, sbasis);
        if norm2(&q) > 1e-8 * before {
            let sq = s.matvec(&q);
            let nrm = dot(&q, &sq).sqrt();
            return Ok((q.iter().map(|x| x / nrm).collect(), sq.iter().map(|x| x / nrm).collect()));
        }
    }
    Err(Error::EigenResidual { index: basis.len(), residual: f64::NAN })
}

/// Ritz pairs of the `want` largest eigenvalues of the Lanczos tridiagonal,
/// mapped back to the pencil, with the worst residual score (converged when
/// at most 1).
fn ritz_pairs(
    a: &SparseSymmetricMatrix,
    s: &SparseSymmetricMatrix,
    basis: &[Vec<f64>],
    alpha: &[f64],
    beta: &[f64],
    want: usize,
    tol: f64,
    floor: f64,
) -> (Vec<(f64, Vec<f64>)>, (usize, f64)) {
    let m = basis.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&p, &q| eig.eigenvalues[q].total_cmp(&eig.eigenvalues[p]).then(p.cmp(&q)));
    let n = basis[0].len();
    let (a_inf, s_inf) = (a.norm_inf(), s.norm_inf());
    let mut out = Vec::with_capacity(want);
    let mut worst = (0, 0.0f64);
    for (slot, &k) in order.iter().take(want.min(m)).enumerate() {
        let y = eig.eigenvectors.column(k);
        let mut x = vec![0.0; n];
        for (j, v) in basis.iter().enumerate() {
            axpy(y[j], v, &mut x);
        }
        let ax = a.matvec(&x);
        let sx = s.matvec(&x);
        let xsx = dot(&x, &sx);
        let lambda = dot(&x, &ax) / xsx;
        let r: f64 = ax.iter().zip(&sx).map(|(p, q)| (p - lambda * q).powi(2)).sum::<f64>().sqrt();
        let rel = r / norm2(&ax).max(f64::MIN_POSITIVE);
        let normwise = r / ((a_inf + lambda.abs() * s_inf) * norm2(&x)).max(f64::MIN_POSITIVE);
        let nrm = xsx.sqrt();
        x.iter_mut().for_each(|v| *v /= nrm);
        // Measured in units of the tolerance so both criteria share one scale.
        let score = (rel / tol).min(normwise / floor);
        if score > worst.1 || !score.is_finite() {
            worst = (slot, if score.is_finite() { score } else { f64::INFINITY });
        }
        out.push((lambda, x));
    }
    if out.len() < want {
        worst = (out.len(), f64::INFINITY);
    }
    (out, worst)
}
