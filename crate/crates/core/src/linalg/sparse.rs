use nalgebra::DMatrix;

use crate::{Error, Result};

/// Symmetric matrix stored as the lower triangle (diagonal included) in
/// compressed rows. Column indices within a row are strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSymmetricMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSymmetricMatrix {
    /// Build from `(i, j, value)` entries; `(i, j)` and `(j, i)` refer to the
    /// same stored entry and duplicates are summed in input order.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut t: Vec<(usize, usize, f64)> =
            triplets.into_iter().map(|(i, j, v)| if i >= j { (i, j, v) } else { (j, i, v) }).collect();
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            assert!(i < n, "row {i} out of range for dimension {n}");
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_lower(&self) -> usize {
        self.vals.len()
    }

    /// Stored `(column, value)` pairs of row `i` with column `<= i`.
    pub fn lower_row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Largest `i - j` over stored entries.
    pub fn lower_bandwidth(&self) -> usize {
        (0..self.n).map(|i| self.row_ptr[i]..self.row_ptr[i + 1]).zip(0..).fold(0, |bw, (r, i)| {
            if r.is_empty() {
                bw
            } else {
                bw.max(i - self.cols[r.start])
            }
        })
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let (j, v) = (self.cols[k], self.vals[k]);
                acc += v * x[j];
                if j != i {
                    y[j] += v * x[i];
                }
            }
            y[i] += acc;
        }
    }

    /// `x^T A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        crate::linalg::dot(x, &self.matvec(y))
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, other: &Self, c: f64) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::Shape { expected: self.n.to_string(), got: other.n.to_string() });
        }
        let a = self.triplets();
        let b = other.triplets().map(|(i, j, v)| (i, j, c * v));
        Ok(Self::from_triplets(self.n, a.chain(b)))
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.lower_row(i).map(move |(j, v)| (i, j, v)))
    }

    /// Keep rows and columns with `map[k] = Some(new_index)`.
    pub fn restrict(&self, map: &[Option<usize>], n_new: usize) -> Self {
        assert_eq!(map.len(), self.n);
        Self::from_triplets(
            n_new,
            self.triplets().filter_map(|(i, j, v)| Some((map[i]?, map[j]?, v))),
        )
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    /// Both triangles in plain CSR form, for fast row access.
    pub fn to_full(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n + 1];
        for (i, j, _) in self.triplets() {
            counts[i + 1] += 1;
            if i != j {
                counts[j + 1] += 1;
            }
        }
        for i in 0..self.n {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut fill = counts;
        let nnz = row_ptr[self.n];
        let mut cols = vec![0; nnz];
        let mut vals = vec![0.0; nnz];
        // Rows come out sorted: lower-triangle entries of row i (cols <= i)
        // arrive in order while scanning rows, and transposed entries (cols > i)
        // arrive later in increasing row order.
        for (i, j, v) in self.triplets() {
            cols[fill[i]] = j;
            vals[fill[i]] = v;
            fill[i] += 1;
            if i != j {
                cols[fill[j]] = i;
                vals[fill[j]] = v;
                fill[j] += 1;
            }
        }
        CsrMatrix { n: self.n, row_ptr, cols, vals }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.triplets().map(|(i, j, v)| if i == j { v * v } else { 2.0 * v * v }).sum::<f64>().sqrt()
    }

    /// Max absolute row sum (the infinity norm).
    pub fn norm_inf(&self) -> f64 {
        let mut sums = vec![0.0; self.n];
        for (i, j, v) in self.triplets() {
            sums[i] += v.abs();
            if i != j {
                sums[j] += v.abs();
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }
}

/// Square matrix in compressed rows holding every nonzero.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, a)| a * x[j]).sum()
            })
            .collect()
    }
}
