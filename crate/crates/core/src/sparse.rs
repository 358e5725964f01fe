//! Compressed sparse row matrices and the symmetric LDL' factorization used
//! by the spatial filters.
//!
//! The crate's sparse needs are narrow: build (I - rho W) and products of such
//! filters, multiply them onto vectors, and factorize the symmetric positive
//! definite normal-equations matrix A'A for log-determinants and solves. That
//! is small enough to own outright, and owning it keeps the numerics (pivot
//! handling, accumulation order, hence bit-level reproducibility) under this
//! crate's control.
//!
//! Factorization is the classic up-looking LDL' with an elimination tree,
//! applied after a reverse Cuthill-McKee reordering to keep fill-in near the
//! band. `L` is unit lower triangular in column-compressed form, `D` a
//! diagonal of strictly positive pivots; `logdet` is the sum of their logs,
//! which is why the filters factor A'A (determinant of A recovered as half of
//! logdet(A'A)) instead of an unsymmetric LU of A.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Square or rectangular sparse matrix, compressed sparse row, column indices
/// strictly increasing within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for (i, j, v) in triplets {
            assert!(i < n_rows && j < n_cols, "triplet ({i}, {j}) out of bounds");
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == j {
                    v += row[k].1;
                    k += 1;
                }
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of row `i` as (column, value) pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// Map every stored value in place.
    pub fn map_values(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.values {
            *v = f(*v);
        }
    }

    /// y = M x.
    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n_cols, "matvec dimension mismatch");
        let mut y = DVector::zeros(self.n_rows);
        for i in 0..self.n_rows {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
        y
    }

    /// Dense Y = M X, column by column.
    pub fn matmul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n_cols, "matmul dimension mismatch");
        let mut y = DMatrix::zeros(self.n_rows, x.ncols());
        for c in 0..x.ncols() {
            for i in 0..self.n_rows {
                let mut s = 0.0;
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.values[k] * x[(self.col_idx[k], c)];
                }
                y[(i, c)] = s;
            }
        }
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        // Counting pass over columns, then a placement pass. Rows of the
        // result come out with strictly increasing column indices because the
        // source is scanned in row order.
        let mut counts = vec![0usize; self.n_cols];
        for &j in &self.col_idx {
            counts[j] += 1;
        }
        let mut row_ptr = vec![0usize; self.n_cols + 1];
        for j in 0..self.n_cols {
            row_ptr[j + 1] = row_ptr[j] + counts[j];
        }
        let mut next = row_ptr[..self.n_cols].to_vec();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let pos = next[j];
                next[j] += 1;
                col_idx[pos] = i;
                values[pos] = self.values[k];
            }
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sparse product M * other (Gustavson's row-wise algorithm with a dense
    /// accumulator; output rows sorted for the CSR invariant).
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.n_cols, other.n_rows, "matmul dimension mismatch");
        let mut row_ptr = Vec::with_capacity(self.n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut acc = vec![0.0f64; other.n_cols];
        let mut mark = vec![usize::MAX; other.n_cols];
        let mut pattern: Vec<usize> = Vec::new();
        for i in 0..self.n_rows {
            pattern.clear();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let a = self.values[k];
                let r = self.col_idx[k];
                for kk in other.row_ptr[r]..other.row_ptr[r + 1] {
                    let j = other.col_idx[kk];
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        pattern.push(j);
                    }
                    acc[j] += a * other.values[kk];
                }
            }
            pattern.sort_unstable();
            for &j in &pattern {
                col_idx.push(j);
                values.push(acc[j]);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: other.n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// M' M, the symmetric positive semidefinite Gram matrix.
    pub fn ata(&self) -> CsrMatrix {
        self.transpose().matmul(self)
    }

    /// Symmetric permutation: result[i, j] = self[perm[i], perm[j]].
    pub fn permute_sym(&self, perm: &[usize]) -> CsrMatrix {
        assert_eq!(
            self.n_rows, self.n_cols,
            "permute_sym needs a square matrix"
        );
        assert_eq!(perm.len(), self.n_rows);
        let mut iperm = vec![0usize; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut triplets = Vec::with_capacity(self.nnz());
        for (new_i, &old_i) in perm.iter().enumerate() {
            for k in self.row_ptr[old_i]..self.row_ptr[old_i + 1] {
                triplets.push((new_i, iperm[self.col_idx[k]], self.values[k]));
            }
        }
        CsrMatrix::from_triplets(self.n_rows, self.n_cols, triplets)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] = self.values[k];
            }
        }
        m
    }
}

/// Reverse Cuthill-McKee ordering of a symmetric sparsity pattern.
///
/// Returns `perm` with `perm[new] = old`. Deterministic: all tie-breaking is
/// by (degree, index). Handles disconnected patterns by restarting from the
/// lowest-degree unvisited node.
pub fn reverse_cuthill_mckee(m: &CsrMatrix) -> Vec<usize> {
    assert_eq!(m.n_rows, m.n_cols);
    let n = m.n_rows;
    let degree = |i: usize| -> usize { m.row(i).filter(|&(j, _)| j != i).count() };
    let degrees: Vec<usize> = (0..n).map(degree).collect();

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::new();

    // BFS level structure from `start`; returns the nodes of the last level.
    let bfs_last_level = |start: usize| -> Vec<usize> {
        let mut seen = vec![false; n];
        seen[start] = true;
        let mut level = vec![start];
        let mut last = level.clone();
        while !level.is_empty() {
            last = level.clone();
            let mut next = Vec::new();
            for &u in &level {
                for (v, _) in m.row(u) {
                    if v != u && !seen[v] {
                        seen[v] = true;
                        next.push(v);
                    }
                }
            }
            level = next;
        }
        last
    };

    while order.len() < n {
        // Component seed: lowest degree among unvisited, then one
        // pseudo-peripheral sweep (the far end of a BFS from the seed).
        let mut start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degrees[i], i))
            .expect("unvisited node must exist");
        let mut last = bfs_last_level(start);
        last.retain(|&u| !visited[u]);
        if let Some(&far) = last.iter().min_by_key(|&&u| (degrees[u], u)) {
            start = far;
        }

        visited[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = m
                .row(u)
                .filter_map(|(v, _)| (v != u && !visited[v]).then_some(v))
                .collect();
            nbrs.sort_unstable_by_key(|&v| (degrees[v], v));
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// LDL' factorization of a symmetric positive definite matrix with an RCM
/// fill-reducing permutation folded in.
///
/// `L` is unit lower triangular (unit diagonal not stored) in compressed
/// column form; all pivots in `d` are strictly positive, enforced at
/// construction. Solves and the log-determinant run against the permuted
/// system transparently.
#[derive(Clone, Debug)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

impl LdlFactor {
    /// Factorize a symmetric positive definite matrix.
    ///
    /// Only the lower triangle of each row (equivalently the upper triangle
    /// by columns) is read; the caller is trusted on symmetry, which every
    /// in-crate producer guarantees by construction.
    pub fn new(m: &CsrMatrix) -> Result<Self> {
        assert_eq!(m.n_rows, m.n_cols, "LDL' needs a square matrix");
        let perm = reverse_cuthill_mckee(m);
        let pm = m.permute_sym(&perm);
        let n = pm.n_rows;

        // Symbolic pass: elimination tree and per-column counts of L.
        // Row k of the permuted matrix restricted to columns <= k is column k
        // of the upper triangle.
        let mut parent = vec![usize::MAX; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for (i0, _) in pm.row(k) {
                if i0 >= k {
                    break;
                }
                let mut i = i0;
                while flag[i] != k {
                    if parent[i] == usize::MAX {
                        parent[i] = k;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }

        // Numeric pass (up-looking): for each row k, scatter the upper column
        // into y, walk the etree for the pattern, then eliminate in
        // topological order appending to the columns of L.
        let mut li = vec![0usize; lp[n]];
        let mut lx = vec![0.0f64; lp[n]];
        let mut d = vec![0.0f64; n];
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        let mut stack = vec![0usize; n];
        let mut lfill = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            y[k] = 0.0;
            for (i0, v) in pm.row(k) {
                if i0 > k {
                    break;
                }
                y[i0] += v;
                let mut len = 0;
                let mut i = i0;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    stack[top] = pattern[len];
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            for &i in &stack[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                for p in lp[i]..lp[i] + lfill[i] {
                    y[li[p]] -= lx[p] * yi;
                }
                let lki = yi / d[i];
                d[k] -= lki * yi;
                let p = lp[i] + lfill[i];
                li[p] = k;
                lx[p] = lki;
                lfill[i] += 1;
            }
            if !(d[k] > 0.0) || !d[k].is_finite() {
                return Err(Error::Singular(format!(
                    "non-positive pivot {} at column {k} of {n}: matrix is not positive definite",
                    d[k]
                )));
            }
        }

        Ok(LdlFactor {
            n,
            perm,
            lp,
            li,
            lx,
            d,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// log det of the factored matrix: sum of log pivots.
    pub fn logdet(&self) -> f64 {
        self.d.iter().map(|&di| di.ln()).sum()
    }

    /// Solve M x = b.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.n, "solve dimension mismatch");
        // Permute in, L z = b, z /= d, L' x = z, permute out.
        let mut z: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for j in 0..self.n {
            let zj = z[j];
            for p in self.lp[j]..self.lp[j + 1] {
                z[self.li[p]] -= self.lx[p] * zj;
            }
        }
        for (zj, dj) in z.iter_mut().zip(&self.d) {
            *zj /= dj;
        }
        for j in (0..self.n).rev() {
            let mut s = z[j];
            for p in self.lp[j]..self.lp[j + 1] {
                s -= self.lx[p] * z[self.li[p]];
            }
            z[j] = s;
        }
        let mut x = DVector::zeros(self.n);
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = z[new];
        }
        x
    }
}
