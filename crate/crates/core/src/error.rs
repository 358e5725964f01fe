//! Crate-wide error type.
//!
//! Numerical failures carry enough context to locate the offending input
//! (grid node, file line, matrix row) because a BMA run aborts on the first
//! failed conditional fit rather than silently dropping it.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("adjacency input: {0}")]
    Adjacency(String),

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("{name} = {value} outside admissible interval ({lo}, {hi})")]
    OutOfRange {
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid {name}: {reason}")]
    Invalid { name: String, reason: String },

    #[error("factorization failed: {0}")]
    Singular(String),

    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("eigensolver did not converge: {0}")]
    Eigen(String),

    #[error("optimizer did not converge: {0}")]
    Optim(String),

    #[error("quadrature: {0}")]
    Quadrature(String),

    #[error("density merge: {0}")]
    Merge(String),

    #[error("grid node ({i}, {j}) at rho = {rho}, lambda = {lambda}: {source}")]
    GridNode {
        i: usize,
        j: usize,
        rho: f64,
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the grid-node provenance demanded of BMA failures.
    pub fn at_grid_node(self, i: usize, j: usize, rho: f64, lambda: f64) -> Self {
        Error::GridNode {
            i,
            j,
            rho,
            lambda,
            source: Box::new(self),
        }
    }
}
