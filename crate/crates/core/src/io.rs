//! File ingestion and plot-ready artifact writers.
//!
//! Two inputs feed a run: a CSV table whose rows are regions and whose
//! columns hold the response and covariates, and a plain-text adjacency
//! edge list. Row i of the table is region i of the adjacency file; the
//! pipeline performs no reordering and no joins, so the two files must be
//! exported against the same region ordering.
//!
//! Outputs favor flat formats a plotting stack can consume directly:
//! densities and lattice weights as CSV, structured summaries as JSON.
//! Numbers are written in shortest round-trip form, which keeps repeated
//! runs byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::dataset::Dataset;
use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::grid::GridPoint;
use crate::merge::Surface;
use crate::weights::SpatialWeights;

/// Reads a header CSV into a dataset, prepending the intercept column.
///
/// `covariates` may be empty for an intercept-only model. Row order defines
/// the region indexing and must match the adjacency file. Errors name the
/// missing column or the first cell that fails to parse.
pub fn load_dataset(path: &Path, response: &str, covariates: &[String]) -> Result<Dataset> {
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format {
        path: display.clone(),
        msg: e.to_string(),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format {
            path: display.clone(),
            msg: e.to_string(),
        })?
        .clone();

    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Format {
                path: display.clone(),
                msg: format!(
                    "column '{name}' not found; header has [{}]",
                    headers.iter().collect::<Vec<_>>().join(", ")
                ),
            })
    };
    let y_idx = find(response)?;
    let cov_idx: Vec<usize> = covariates
        .iter()
        .map(|c| find(c))
        .collect::<Result<_>>()?;

    let mut y = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); cov_idx.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format {
            path: display.clone(),
            msg: e.to_string(),
        })?;
        let cell = |idx: usize, name: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| Error::Format {
                path: display.clone(),
                msg: format!(
                    "data row {}, column '{name}': cannot parse '{raw}' as a number",
                    row + 1
                ),
            })
        };
        y.push(cell(y_idx, response)?);
        for (k, &idx) in cov_idx.iter().enumerate() {
            cols[k].push(cell(idx, &covariates[k])?);
        }
    }

    let named = covariates
        .iter()
        .cloned()
        .zip(cols)
        .collect::<Vec<(String, Vec<f64>)>>();
    Dataset::from_parts(y, named, "(Intercept)")
}

/// Reads a plain-text adjacency edge list for `n` regions.
///
/// Each non-empty line is one directed edge, `i j` or `i j weight`, with
/// whitespace or comma separators; `#` starts a comment line. Indices are
/// taken 0-based unless the file references region `n` and never region 0,
/// in which case the whole file is read 1-based. Omitted weights default
/// to 1. The returned matrix is raw; callers standardize it.
pub fn load_adjacency(path: &Path, n: usize) -> Result<SpatialWeights> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::File {
        path: display.clone(),
        source: e,
    })?;

    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    let mut min_idx = usize::MAX;
    let mut max_idx = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Format {
                path: display.clone(),
                msg: format!(
                    "line {}: expected 'i j' or 'i j weight', got '{line}'",
                    lineno + 1
                ),
            });
        }
        let index = |raw: &str| -> Result<usize> {
            raw.parse::<usize>().map_err(|_| Error::Format {
                path: display.clone(),
                msg: format!("line {}: '{raw}' is not a region index", lineno + 1),
            })
        };
        let i = index(fields[0])?;
        let j = index(fields[1])?;
        let w = match fields.get(2) {
            Some(raw) => raw.parse::<f64>().map_err(|_| Error::Format {
                path: display.clone(),
                msg: format!("line {}: '{raw}' is not a weight", lineno + 1),
            })?,
            None => 1.0,
        };
        min_idx = min_idx.min(i.min(j));
        max_idx = max_idx.max(i.max(j));
        edges.push((i, j, w));
    }
    if edges.is_empty() {
        return Err(Error::Format {
            path: display,
            msg: "no edges found".into(),
        });
    }

    if min_idx >= 1 && max_idx == n {
        log::info!("{display}: indices run 1..={n}, reading the edge list as 1-based");
        for e in &mut edges {
            e.0 -= 1;
            e.1 -= 1;
        }
    } else if max_idx >= n {
        return Err(Error::Format {
            path: display,
            msg: format!(
                "region index {max_idx} is out of range for {n} regions (0-based indexing)"
            ),
        });
    }
    SpatialWeights::from_edges(n, &edges)
}

/// Writes the lattice as CSV: one node per row with its evidence, prior,
/// and normalized weight.
pub fn write_weights_csv(path: &Path, points: &[GridPoint]) -> Result<()> {
    let mut out = open_writer(path)?;
    writeln!(out, "rho,lambda,log_evidence,log_prior,weight")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{}",
            p.rho, p.lambda, p.log_evidence, p.log_prior_internal, p.weight
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a density grid as CSV with columns `x,density`.
pub fn write_density_csv(path: &Path, grid: &DensityGrid) -> Result<()> {
    let mut out = open_writer(path)?;
    writeln!(out, "x,density")?;
    for (x, d) in grid.abscissae().iter().zip(grid.densities()) {
        writeln!(out, "{x},{d}")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a joint density surface in long format, `rho,lambda,density`,
/// one grid cell per row.
pub fn write_surface_csv(path: &Path, surface: &Surface) -> Result<()> {
    let mut out = open_writer(path)?;
    writeln!(out, "rho,lambda,density")?;
    for (i, x) in surface.x.iter().enumerate() {
        for (j, y) in surface.y.iter().enumerate() {
            writeln!(out, "{x},{y},{}", surface.z[i][j])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Serializes a report as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = open_writer(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Lowercases a column name and maps every non-alphanumeric run to one
/// underscore, for use in file names; empty results fall back to "column".
pub fn sanitize_name(name: &str) -> String {
    let mut s = String::with_capacity(name.len());
    let mut gap = false;
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            if gap && !s.is_empty() {
                s.push('_');
            }
            gap = false;
            s.push(c.to_ascii_lowercase());
        } else {
            gap = true;
        }
    }
    if s.is_empty() {
        "column".into()
    } else {
        s
    }
}

fn open_writer(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).map_err(|e| Error::File {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn write_temp(name: &str, contents: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("sac-bma-io-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn dataset_loads_with_intercept_prepended() {
        let path = write_temp(
            "small.csv",
            "region,outcome,income\na,1.5,10\nb,2.5,20\nc,3.5,30\n",
        );
        let data = load_dataset(&path, "outcome", &["income".into()]).unwrap();
        assert_eq!(data.n(), 3);
        assert_eq!(data.p(), 2);
        assert_eq!(data.names(), ["(Intercept)", "income"]);
        assert_relative_eq!(data.x()[(0, 0)], 1.0);
        assert_relative_eq!(data.x()[(2, 1)], 30.0);
        assert_relative_eq!(data.y()[1], 2.5);
    }

    #[test]
    fn missing_column_is_named_in_the_error() {
        let path = write_temp("missing.csv", "a,b\n1,2\n");
        let err = load_dataset(&path, "outcome", &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("'outcome'"), "unhelpful message: {msg}");
    }

    #[test]
    fn non_numeric_cell_is_located_in_the_error() {
        let path = write_temp("bad_cell.csv", "y,x\n1,2\noops,3\n");
        let err = load_dataset(&path, "y", &["x".into()]).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("row 2") && msg.contains("'oops'"),
            "unhelpful message: {msg}"
        );
    }

    #[test]
    fn adjacency_accepts_zero_based_edges_and_comments() {
        let path = write_temp(
            "adj0.txt",
            "# ring of three\n0 1\n1 0\n1 2\n2 1\n2 0\n0 2\n",
        );
        let w = load_adjacency(&path, 3).unwrap();
        assert_eq!(w.n(), 3);
        assert_eq!(w.matrix().nnz(), 6);
    }

    #[test]
    fn adjacency_detects_one_based_indexing() {
        // References region 3 in a 3-region file and never region 0.
        let path = write_temp("adj1.txt", "1,2\n2,1\n2,3\n3,2\n");
        let w = load_adjacency(&path, 3).unwrap();
        assert_eq!(w.matrix().nnz(), 4);
        // Edge (2,3) must have landed on the 0-based pair (1,2).
        assert!(w.matrix().row(1).any(|(j, _)| j == 2));
    }

    #[test]
    fn adjacency_rejects_out_of_range_and_garbage() {
        let oob = write_temp("adj_oob.txt", "0 5\n");
        assert!(load_adjacency(&oob, 3).is_err());
        let garbage = write_temp("adj_garbage.txt", "0 1 2 3\n");
        assert!(load_adjacency(&garbage, 3).is_err());
        let empty = write_temp("adj_empty.txt", "# nothing\n");
        assert!(load_adjacency(&empty, 3).is_err());
    }

    #[test]
    fn density_csv_round_trips_through_the_loader_conventions() {
        let grid = DensityGrid::new(vec![0.0, 0.5, 1.0], vec![0.5, 1.5, 0.5]).unwrap();
        let dir = std::env::temp_dir().join("sac-bma-io-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("density.csv");
        write_density_csv(&path, &grid).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next(), Some("x,density"));
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("0.5,1.5"));
    }

    #[test]
    fn sanitized_names_are_filesystem_friendly() {
        assert_eq!(sanitize_name("(Intercept)"), "intercept");
        assert_eq!(sanitize_name("GDPCAP"), "gdpcap");
        assert_eq!(sanitize_name("lag.x1"), "lag_x1");
        assert_eq!(sanitize_name("__"), "column");
    }
}
