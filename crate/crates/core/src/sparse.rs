//! Compressed sparse row matrices and an envelope Cholesky factorization.
//!
//! The finite element operators assembled in this crate are symmetric
//! positive definite with the sparsity of a (subdivided) graph, so after a
//! reverse Cuthill-McKee reordering they have a narrow profile. A skyline
//! (envelope) Cholesky is exact for such matrices: all fill-in stays inside
//! the envelope of the reordered matrix. That keeps the solver small,
//! dependency-free and fast at the problem sizes this crate targets
//! (hundreds to a few thousand unknowns).

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Sparse matrix in CSR form with explicitly stored (possibly zero) entries.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicate entries
    /// are summed. Column indices within each row end up sorted, so the
    /// resulting storage is deterministic regardless of triplet order.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::Factorization(format!(
                    "triplet ({r}, {c}) outside {nrows}x{ncols} matrix"
                )));
            }
            per_row[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut per_row {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *values.last_mut().expect("nonempty") += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self { nrows, ncols, row_ptr, col_idx, values })
    }

    /// Identity matrix of size `n`.
    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Diagonal matrix from the given entries.
    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    /// Entry `(i, j)`, zero if not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Diagonal entries (zero where not stored).
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Row sums, i.e. the matrix applied to the all-ones vector.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        let mut y = vec![0.0; self.nrows];
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
        y
    }

    /// `y = Aᵀ x`.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "matvec dimension mismatch");
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * xi;
            }
        }
        y
    }

    /// Transposed copy.
    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                triplets.push((c, i, v));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, &triplets).expect("valid transpose")
    }

    /// Sparse-sparse product `A B` (Gustavson's algorithm).
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows, "matmul dimension mismatch");
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut acc = vec![0.0; other.ncols];
        let mut touched = Vec::new();
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                let (bcols, bvals) = other.row(k);
                for (&j, &b) in bcols.iter().zip(bvals) {
                    if acc[j] == 0.0 && !touched.contains(&j) {
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                col_idx.push(j);
                values.push(acc[j]);
                acc[j] = 0.0;
            }
            touched.clear();
            row_ptr.push(col_idx.len());
        }
        Self { nrows: self.nrows, ncols: other.ncols, row_ptr, col_idx, values }
    }

    /// Linear combination `a·self + b·other` (dimensions must match).
    pub fn add_scaled(&self, a: f64, other: &Self, b: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                triplets.push((i, c, a * v));
            }
            let (cols, vals) = other.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                triplets.push((i, c, b * v));
            }
        }
        Self::from_triplets(self.nrows, self.ncols, &triplets).expect("valid sum")
    }

    /// Scales row `i` by `d[i]` (left multiplication by a diagonal matrix).
    pub fn scale_rows(&self, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.nrows);
        let mut out = self.clone();
        for (i, &di) in d.iter().enumerate() {
            let (a, b) = (out.row_ptr[i], out.row_ptr[i + 1]);
            for v in &mut out.values[a..b] {
                *v *= di;
            }
        }
        out
    }

    /// Maximum asymmetry `|A - Aᵀ|` over stored entries.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(c, i)).abs());
            }
        }
        worst
    }

    /// Replaces the matrix by `(A + Aᵀ)/2` to remove accumulated roundoff
    /// asymmetry after products of symmetric factors.
    pub fn symmetrized(&self) -> Self {
        self.add_scaled(0.5, &self.transpose(), 0.5)
    }

    /// Dense copy (intended for oracle tests and small fallbacks).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(i, c)] = v;
            }
        }
        m
    }
}

/// Envelope (skyline) Cholesky factorization with reverse Cuthill-McKee
/// reordering, for sparse symmetric positive definite matrices.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    /// Permutation: `perm[k]` is the original index stored at position `k`.
    perm: Vec<usize>,
    /// First stored column of each (permuted) factor row.
    first: Vec<usize>,
    /// Offset of each row's slice in `data`; row `i` holds columns
    /// `first[i]..=i`.
    row_start: Vec<usize>,
    data: Vec<f64>,
}

impl SparseCholesky {
    /// Factors a symmetric positive definite sparse matrix. Fails if the
    /// matrix is not square or a pivot is nonpositive.
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Factorization("matrix is not square".into()));
        }
        let perm = reverse_cuthill_mckee(a);
        let mut iperm = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }

        // Envelope of the permuted matrix: skyline Cholesky fill stays inside.
        let mut first: Vec<usize> = (0..n).collect();
        for i in 0..n {
            let (cols, _) = a.row(i);
            let pi = iperm[i];
            for &c in cols {
                let pc = iperm[c];
                if pc < pi {
                    first[pi] = first[pi].min(pc);
                }
            }
        }
        let mut row_start = Vec::with_capacity(n);
        let mut len = 0usize;
        for (i, &fi) in first.iter().enumerate() {
            row_start.push(len);
            len += i - fi + 1;
        }
        let mut data = vec![0.0; len];

        // Scatter the permuted matrix into the envelope.
        for i in 0..n {
            let (cols, vals) = a.row(i);
            let pi = iperm[i];
            for (&c, &v) in cols.iter().zip(vals) {
                let pc = iperm[c];
                if pc <= pi {
                    data[row_start[pi] + (pc - first[pi])] = v;
                }
            }
        }

        // In-place skyline factorization.
        for i in 0..n {
            for j in first[i]..i {
                let lo = first[i].max(first[j]);
                let mut s = data[row_start[i] + (j - first[i])];
                for k in lo..j {
                    s -= data[row_start[i] + (k - first[i])]
                        * data[row_start[j] + (k - first[j])];
                }
                data[row_start[i] + (j - first[i])] = s / data[row_start[j] + (j - first[j])];
            }
            let mut d = data[row_start[i] + (i - first[i])];
            for k in first[i]..i {
                let l = data[row_start[i] + (k - first[i])];
                d -= l * l;
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::Factorization(format!(
                    "nonpositive pivot {d:.3e} at column {i}"
                )));
            }
            data[row_start[i] + (i - first[i])] = d.sqrt();
        }

        Ok(Self { n, perm, first, row_start, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "solve dimension mismatch");
        let mut y: Vec<f64> = (0..self.n).map(|i| b[self.perm[i]]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = vec![0.0; self.n];
        for i in 0..self.n {
            x[self.perm[i]] = y[i];
        }
        x
    }

    /// Returns `w = Pᵀ L⁻ᵀ z` where `P A Pᵀ = L Lᵀ`. For i.i.d. standard
    /// normal `z`, the result has covariance `A⁻¹`, which is what prior
    /// sampling from a precision matrix needs.
    pub fn inv_sqrt_transpose_mul(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.n, "dimension mismatch");
        let mut y = z.to_vec();
        self.backward(&mut y);
        let mut w = vec![0.0; self.n];
        for i in 0..self.n {
            w[self.perm[i]] = y[i];
        }
        w
    }

    /// `log det A` of the factored matrix.
    pub fn log_det(&self) -> f64 {
        (0..self.n)
            .map(|i| 2.0 * self.data[self.row_start[i] + (i - self.first[i])].ln())
            .sum()
    }

    // The substitution loops read already-updated entries of `y` while
    // writing the current one, so plain index loops are the natural form.
    #[allow(clippy::needless_range_loop)]
    fn forward(&self, y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = y[i];
            for k in self.first[i]..i {
                s -= self.data[self.row_start[i] + (k - self.first[i])] * y[k];
            }
            y[i] = s / self.data[self.row_start[i] + (i - self.first[i])];
        }
    }

    #[allow(clippy::needless_range_loop)]
    fn backward(&self, y: &mut [f64]) {
        for i in (0..self.n).rev() {
            let x = y[i] / self.data[self.row_start[i] + (i - self.first[i])];
            y[i] = x;
            for k in self.first[i]..i {
                y[k] -= self.data[self.row_start[i] + (k - self.first[i])] * x;
            }
        }
    }
}

/// Reverse Cuthill-McKee ordering on the symmetric sparsity pattern.
/// Deterministic: component starts are chosen by (degree, index), neighbor
/// visits by (degree, index).
fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.nrows();
    let degree: Vec<usize> = (0..n)
        .map(|i| a.row(i).0.iter().filter(|&&c| c != i).count())
        .collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::new();
    let mut starts: Vec<usize> = (0..n).collect();
    starts.sort_by_key(|&i| (degree[i], i));
    for &start in &starts {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = a
                .row(u)
                .0
                .iter()
                .copied()
                .filter(|&c| c != u && !visited[c])
                .collect();
            nbrs.sort_by_key(|&c| (degree[c], c));
            for c in nbrs {
                if !visited[c] {
                    visited[c] = true;
                    queue.push_back(c);
                }
            }
        }
    }
    order.reverse();
    order
}
