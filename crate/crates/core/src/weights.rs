//! Spatial weights: loading, validation, row-standardization, and the
//! spectral bound that defines the admissible autocorrelation interval.
//!
//! A weights matrix W is a nonnegative n by n matrix with zero diagonal in
//! which entry (i, j) measures how strongly region j neighbors region i.
//! Row-standardizing divides each row by its sum, so the spatial lag Wy
//! averages over neighbors and the constant vector is always an eigenvector
//! with eigenvalue 1. Autoregressive parameters are admissible on (1/m, 1),
//! where m is the smallest real eigenvalue of the standardized matrix; since
//! the diagonal (hence the trace) is zero and 1 is in the spectrum, m is
//! strictly negative and the interval always contains (-1, 1) when m >= -1.
//!
//! Eigenvalue computation picks its route by structure. When the raw weights
//! were symmetric, the standardized matrix W = D^-1 A is similar to the
//! symmetric matrix D^-1/2 A D^-1/2 whose entries are sqrt(W_ij W_ji), so a
//! symmetric eigensolver applies and the spectrum is provably real. Otherwise
//! a Schur decomposition supplies the complex spectrum and the smallest real
//! eigenvalue is selected. Past a size threshold both routes give way to a
//! shifted power iteration on (W - I), whose dominant eigenvalue is m - 1.

use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Largest n for which the minimum eigenvalue is computed densely; above it
/// a shifted power iteration takes over.
const DENSE_EIGEN_LIMIT: usize = 2000;

/// Sparse spatial weights matrix with standardization state and a lazily
/// computed spectral lower bound.
pub struct SpatialWeights {
    n: usize,
    entries: CsrMatrix,
    row_standardized: bool,
    /// Whether the matrix was symmetric before standardization; decides the
    /// eigenvalue route.
    raw_symmetric: bool,
    min_eig: OnceLock<f64>,
}

impl fmt::Debug for SpatialWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpatialWeights")
            .field("n", &self.n)
            .field("nnz", &self.entries.nnz())
            .field("row_standardized", &self.row_standardized)
            .field("raw_symmetric", &self.raw_symmetric)
            .field("min_eig", &self.min_eig.get())
            .finish()
    }
}

impl SpatialWeights {
    /// Build from explicit edges (0-based indices, positive weights).
    ///
    /// Edges are directed; duplicates sum. Every region must appear as the
    /// source of at least one edge, otherwise its row is zero and the matrix
    /// cannot be row-standardized.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Adjacency(
                "weights matrix needs at least one region".into(),
            ));
        }
        for &(i, j, w) in edges {
            if i == j {
                return Err(Error::Adjacency(format!(
                    "self-loop on region {} is not allowed",
                    i + 1
                )));
            }
            if i >= n || j >= n {
                return Err(Error::Adjacency(format!(
                    "edge ({}, {}) is out of range for n = {n}",
                    i + 1,
                    j + 1
                )));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Adjacency(format!(
                    "edge ({}, {}) has invalid weight {w}; weights must be finite and nonnegative",
                    i + 1,
                    j + 1
                )));
            }
        }
        let entries = CsrMatrix::from_triplets(n, n, edges.iter().copied());
        for i in 0..n {
            if entries.row(i).all(|(_, v)| v == 0.0) {
                return Err(Error::Adjacency(format!(
                    "region {} has no neighbors (isolated regions are not allowed)",
                    i + 1
                )));
            }
        }
        let raw_symmetric = is_symmetric(&entries);
        Ok(SpatialWeights {
            n,
            entries,
            row_standardized: false,
            raw_symmetric,
            min_eig: OnceLock::new(),
        })
    }

    /// Load a weights matrix from a text file.
    ///
    /// Two formats share this reader, both 1-based and '#'-commented:
    ///
    /// - edge list: one `i j [weight]` per line (weight defaults to 1);
    /// - coordinate: a header `n n nnz` followed by exactly nnz `i j weight`
    ///   lines.
    ///
    /// A first data line with three integer tokens, equal first and second,
    /// and third equal to the number of remaining data lines is read as a
    /// coordinate header; anything else is an edge list. `expected_n` pins
    /// the matrix size (regions beyond the largest index seen would
    /// otherwise be undetectable); when absent the largest index wins.
    pub fn load_adjacency(path: &Path, expected_n: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::File {
            path: path.display().to_string(),
            source: e,
        })?;
        let bad = |line_no: usize, msg: String| Error::Format {
            path: path.display().to_string(),
            msg: format!("line {line_no}: {msg}"),
        };

        let data_lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        if data_lines.is_empty() {
            return Err(bad(0, "no edges found".into()));
        }

        // Coordinate-header probe (see the format rule in the doc comment).
        let first_tokens: Vec<&str> = data_lines[0].1.split_whitespace().collect();
        let header: Option<usize> = if first_tokens.len() == 3 {
            match (
                first_tokens[0].parse::<usize>(),
                first_tokens[1].parse::<usize>(),
                first_tokens[2].parse::<usize>(),
            ) {
                (Ok(a), Ok(b), Ok(nnz)) if a == b && nnz == data_lines.len() - 1 => Some(a),
                _ => None,
            }
        } else {
            None
        };

        let body = if header.is_some() {
            &data_lines[1..]
        } else {
            &data_lines[..]
        };
        let mut edges = Vec::with_capacity(body.len());
        let mut max_index = 0usize;
        for &(line_no, line) in body {
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 2 && tok.len() != 3 {
                return Err(bad(
                    line_no,
                    format!("expected 'i j [weight]', got {} tokens", tok.len()),
                ));
            }
            let i: usize = tok[0]
                .parse()
                .map_err(|_| bad(line_no, format!("bad region index '{}'", tok[0])))?;
            let j: usize = tok[1]
                .parse()
                .map_err(|_| bad(line_no, format!("bad region index '{}'", tok[1])))?;
            let w: f64 = match tok.get(2) {
                Some(t) => t
                    .parse()
                    .map_err(|_| bad(line_no, format!("bad weight '{t}'")))?,
                None => 1.0,
            };
            if i == 0 || j == 0 {
                return Err(bad(line_no, "region indices are 1-based; found 0".into()));
            }
            max_index = max_index.max(i).max(j);
            edges.push((i - 1, j - 1, w));
        }

        let n = match (header, expected_n) {
            (_, Some(n)) => n,
            (Some(n), None) => n,
            (None, None) => max_index,
        };
        if max_index > n {
            return Err(Error::Adjacency(format!(
                "adjacency references region {max_index} but n = {n}"
            )));
        }
        Self::from_edges(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_row_standardized(&self) -> bool {
        self.row_standardized
    }

    /// The underlying sparse matrix.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.entries
    }

    /// Divide every row by its sum so rows of the result sum to one.
    ///
    /// Idempotent: a standardized matrix passes through unchanged.
    pub fn row_standardize(self) -> Result<Self> {
        if self.row_standardized {
            return Ok(self);
        }
        let n = self.n;
        let mut triplets = Vec::with_capacity(self.entries.nnz());
        for i in 0..n {
            let sum: f64 = self.entries.row(i).map(|(_, v)| v).sum();
            if !(sum > 0.0) {
                return Err(Error::Adjacency(format!(
                    "region {} has zero total weight; cannot row-standardize",
                    i + 1
                )));
            }
            triplets.extend(self.entries.row(i).map(|(j, v)| (i, j, v / sum)));
        }
        Ok(SpatialWeights {
            n,
            entries: CsrMatrix::from_triplets(n, n, triplets),
            row_standardized: true,
            raw_symmetric: self.raw_symmetric,
            min_eig: OnceLock::new(),
        })
    }

    /// Smallest real eigenvalue m of the row-standardized matrix; cached
    /// after the first call.
    ///
    /// The admissible autocorrelation interval is (1/m, 1).
    pub fn min_eigenvalue(&self) -> Result<f64> {
        if !self.row_standardized {
            return Err(Error::Invalid {
                name: "weights".into(),
                reason: "min_eigenvalue requires a row-standardized matrix".into(),
            });
        }
        if let Some(&m) = self.min_eig.get() {
            return Ok(m);
        }
        let m = if self.n <= DENSE_EIGEN_LIMIT {
            self.min_eigenvalue_dense()?
        } else {
            self.min_eigenvalue_power()?
        };
        if !(m < 0.0) {
            return Err(Error::Eigen(format!(
                "minimum eigenvalue {m} is not negative; a zero-diagonal row-standardized \
                 matrix must have one (trace is zero while 1 is an eigenvalue)"
            )));
        }
        let _ = self.min_eig.set(m);
        Ok(m)
    }

    /// Admissible open interval (1/m, 1) for rho and lambda.
    pub fn admissible_interval(&self) -> Result<(f64, f64)> {
        Ok((1.0 / self.min_eigenvalue()?, 1.0))
    }

    /// Spatial lag WX: each row of the result averages X over the row's
    /// neighbors (when standardized, which is required).
    pub fn lag(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if !self.row_standardized {
            return Err(Error::Invalid {
                name: "weights".into(),
                reason: "lag requires a row-standardized matrix".into(),
            });
        }
        if x.nrows() != self.n {
            return Err(Error::Dimension {
                context: "spatial lag".into(),
                expected: self.n,
                got: x.nrows(),
            });
        }
        Ok(self.entries.matmul_dense(x))
    }

    fn min_eigenvalue_dense(&self) -> Result<f64> {
        if self.raw_symmetric {
            // W = D^-1 A with symmetric A is similar to the symmetric matrix
            // with entries sqrt(W_ij W_ji); its spectrum is real and equal.
            let mut sym = DMatrix::zeros(self.n, self.n);
            let dense = self.entries.to_dense();
            for i in 0..self.n {
                for j in 0..self.n {
                    sym[(i, j)] = (dense[(i, j)] * dense[(j, i)]).sqrt();
                }
            }
            let eig = nalgebra::SymmetricEigen::new(sym);
            Ok(eig.eigenvalues.min())
        } else {
            let spectrum = self
                .entries
                .to_dense()
                .try_schur(1e-12, 0)
                .ok_or_else(|| {
                    Error::Eigen(
                        "Schur decomposition of the weights matrix did not converge".into(),
                    )
                })?
                .complex_eigenvalues();
            // Real eigenvalues up to round-off; row-standardization bounds
            // the spectrum by 1, so an absolute tolerance is appropriate.
            let real_min = spectrum
                .iter()
                .filter(|z| z.im.abs() <= 1e-9)
                .map(|z| z.re)
                .fold(f64::INFINITY, f64::min);
            if real_min.is_finite() {
                Ok(real_min)
            } else {
                Err(Error::Eigen(
                    "weights matrix has no real eigenvalues".into(),
                ))
            }
        }
    }

    /// Shifted power iteration: the dominant eigenvalue of (W - I) is m - 1
    /// because the spectrum lies in [m, 1] and the shift sends 1 to 0.
    fn min_eigenvalue_power(&self) -> Result<f64> {
        const MAX_ITER: usize = 20_000;
        const TOL: f64 = 1e-10;
        // Deterministic start with broad spectral support; the constant
        // vector (eigenvalue 1, shifted to 0) is a poor start, so alternate
        // signs with an index-dependent wobble.
        let mut v = DVector::from_fn(self.n, |i, _| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            s * (1.0 + 0.37 * ((i as f64 + 1.0) * 0.7391).sin())
        });
        v /= v.norm();
        let mut mu_prev = f64::INFINITY;
        for _ in 0..MAX_ITER {
            let mut w = self.entries.matvec(&v);
            w -= &v; // (W - I) v
            let norm = w.norm();
            if norm == 0.0 {
                return Err(Error::Eigen(
                    "power iteration collapsed to the null space of W - I".into(),
                ));
            }
            w /= norm;
            // Rayleigh quotient of (W - I) at the current iterate.
            let mut av = self.entries.matvec(&w);
            av -= &w;
            let mu = w.dot(&av);
            v = w;
            if (mu - mu_prev).abs() <= TOL * mu.abs().max(1.0) {
                return Ok(1.0 + mu);
            }
            mu_prev = mu;
        }
        Err(Error::Eigen(format!(
            "power iteration for the minimum eigenvalue did not converge in {MAX_ITER} iterations"
        )))
    }
}

/// Pattern-and-value symmetry check with an absolute tolerance scaled to the
/// largest entry.
fn is_symmetric(m: &CsrMatrix) -> bool {
    let scale = (0..m.n_rows())
        .flat_map(|i| m.row(i).map(|(_, v)| v.abs()))
        .fold(0.0f64, f64::max)
        .max(1.0);
    let t = m.transpose();
    let n = m.n_rows();
    for i in 0..n {
        let a: Vec<(usize, f64)> = m.row(i).collect();
        let b: Vec<(usize, f64)> = t.row(i).collect();
        if a.len() != b.len() {
            return false;
        }
        for (&(ja, va), &(jb, vb)) in a.iter().zip(&b) {
            if ja != jb || (va - vb).abs() > 1e-12 * scale {
                return false;
            }
        }
    }
    true
}
