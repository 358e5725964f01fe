//! Configuration file support and flag parsing helpers.
//!
//! A run can be described in a small TOML file instead of (or in addition
//! to) command-line flags. The file is flat key-value text: every key uses
//! the exact spelling of the corresponding long flag, and section headers
//! are purely organizational, so the same run can be written either way:
//!
//! ```toml
//! [data]
//! data = "turnout.csv"
//! adjacency = "neighbors.txt"
//! response = "turnover"
//! covariates = "GDPCAP"
//!
//! [grid]
//! grid-dims = "40x20"
//! semi-amplitude = 3.0
//!
//! [priors]
//! beta-precision = 0.001
//! ```
//!
//! Precedence is strict: a flag given on the command line overrides the
//! file, and the file overrides the built-in default. Unknown keys are
//! rejected rather than ignored so that a typo cannot silently fall back
//! to a default.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sac_bma::{
    delta_variance, to_internal, Error, GridSetting, GridSpec, InternalPoint, Result,
};

/// Default Gaussian prior precision on the coefficients. Deliberately
/// vague: regression coefficients in raw data units are routinely far
/// from zero, and a tight zero-mean prior would shrink them visibly.
pub const DEFAULT_BETA_PRECISION: f64 = 1e-3;

/// Default shape of the Gamma prior on the noise precision.
pub const DEFAULT_TAU_SHAPE: f64 = 0.01;

/// Default rate of the Gamma prior on the noise precision.
pub const DEFAULT_TAU_RATE: f64 = 0.01;

/// Default lattice dimensions (nodes over rho by nodes over lambda).
pub const DEFAULT_DIMS: (usize, usize) = (20, 20);

/// Default lattice half-width in posterior standard deviations per axis.
pub const DEFAULT_SEMI_AMPLITUDE: f64 = 3.0;

/// Every key a run configuration file may contain. Each key is spelled
/// exactly like its long flag; `--config` itself and `--impact-intercept`
/// are command-line only.
const KNOWN_KEYS: [&str; 19] = [
    "data",
    "adjacency",
    "response",
    "covariates",
    "lagged",
    "grid-dims",
    "grid-center",
    "grid-se",
    "semi-amplitude",
    "beta-precision",
    "tau-shape",
    "tau-rate",
    "mcmc",
    "burn-in",
    "iterations",
    "thin",
    "seed",
    "threads",
    "out",
];

/// A parsed configuration file, flattened to one key-value map.
///
/// Values are held as strings and converted on demand with the same
/// parsers the command line uses, so `seed = 42` and `seed = "42"` are
/// interchangeable.
#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
    path: String,
}

impl FileConfig {
    /// A configuration with no file behind it; every lookup misses.
    pub fn empty() -> Self {
        Self::default()
    }

    /// Reads and flattens a TOML configuration file.
    ///
    /// Top-level scalars and scalars inside one level of section headers
    /// are accepted; arrays, nested tables, and dates are not, and a key
    /// appearing twice (even under different sections) is an error since
    /// the sections carry no meaning.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::File {
            path: path.display().to_string(),
            source,
        })?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = FileConfig {
            values: BTreeMap::new(),
            path: path.display().to_string(),
        };
        for (key, value) in table {
            match value {
                toml::Value::Table(section) => {
                    for (inner, scalar) in section {
                        cfg.insert(&inner, scalar)?;
                    }
                }
                scalar => cfg.insert(&key, scalar)?,
            }
        }
        Ok(cfg)
    }

    fn insert(&mut self, key: &str, value: toml::Value) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!(
                "{}: unknown key '{key}' (valid keys: {})",
                self.path,
                KNOWN_KEYS.join(", ")
            )));
        }
        let text = match value {
            toml::Value::String(s) => s,
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            other => {
                return Err(Error::Config(format!(
                    "{}: key '{key}' must be a scalar, found {}",
                    self.path,
                    other.type_str()
                )))
            }
        };
        if self.values.insert(key.to_string(), text).is_some() {
            return Err(Error::Config(format!(
                "{}: key '{key}' given more than once (sections do not scope keys)",
                self.path
            )));
        }
        Ok(())
    }

    /// Looks up a key and parses it, reporting the file and key on failure.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                Error::Config(format!("{}: key '{key}': cannot parse '{raw}': {e}", self.path))
            }),
        }
    }
}

/// Returns the flag value if given, otherwise the file value for `key`.
pub fn pick<T: FromStr>(flag: Option<T>, file: &FileConfig, key: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}

/// Boolean merge for presence flags: the flag can only enable, so the
/// file value applies whenever the flag is absent.
pub fn pick_flag(flag: bool, file: &FileConfig, key: &str) -> Result<bool> {
    if flag {
        return Ok(true);
    }
    Ok(file.get::<bool>(key)?.unwrap_or(false))
}

/// Parses lattice dimensions written as `K1xK2`, for instance `20x20`.
pub fn parse_dims(text: &str) -> Result<(usize, usize)> {
    let lower = text.trim();
    let parts: Vec<&str> = lower.splitn(2, ['x', 'X']).collect();
    let parsed = if parts.len() == 2 {
        parts[0]
            .trim()
            .parse::<usize>()
            .ok()
            .zip(parts[1].trim().parse::<usize>().ok())
    } else {
        None
    };
    parsed.ok_or_else(|| {
        Error::Config(format!("grid-dims: expected K1xK2 (for instance 20x20), got '{text}'"))
    })
}

/// Parses a comma-separated pair of reals, for instance `0.5,-0.1`.
pub fn parse_pair(name: &str, text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.splitn(2, ',').collect();
    let parsed = if parts.len() == 2 {
        parts[0]
            .trim()
            .parse::<f64>()
            .ok()
            .zip(parts[1].trim().parse::<f64>().ok())
    } else {
        None
    };
    parsed.ok_or_else(|| {
        Error::Config(format!("{name}: expected two comma-separated numbers, got '{text}'"))
    })
}

/// Splits a comma-separated name list, trimming whitespace and dropping
/// empty entries, so `""` means no covariates.
pub fn split_list(text: &str) -> Vec<String> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Assembles the lattice setting from the resolved grid options.
///
/// With neither a center nor scales the lattice is placed automatically
/// at the located posterior mode. Supplying `--grid-center r,l` together
/// with `--grid-se s1,s2` pins it instead: the center is a natural-scale
/// (rho, lambda) pair and the scales are natural-scale standard errors,
/// typically from an external maximum-likelihood fit, which are carried
/// to the internal scale by the delta method. Giving only one of the two
/// is rejected since a center without scales (or the reverse) does not
/// determine a lattice.
pub fn build_grid(
    dims: (usize, usize),
    center: Option<(f64, f64)>,
    se: Option<(f64, f64)>,
    semi_amplitude: f64,
) -> Result<GridSetting> {
    match (center, se) {
        (None, None) => Ok(GridSetting::Auto {
            dims,
            semi_amplitude,
        }),
        (Some((r, l)), Some((s1, s2))) => {
            let spec = GridSpec {
                center: InternalPoint::new(to_internal(r)?, to_internal(l)?),
                internal_sds: (
                    delta_variance(r, s1)?.sqrt(),
                    delta_variance(l, s2)?.sqrt(),
                ),
                dims,
                semi_amplitude,
            };
            Ok(GridSetting::Manual(spec))
        }
        _ => Err(Error::Config(
            "grid-center and grid-se must be given together".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(name: &str, body: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("sac-bma-cli-config-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn sections_flatten_and_types_coerce() {
        let path = write_temp(
            "flatten.toml",
            "out = \"results\"\n\n[grid]\ngrid-dims = \"10x5\"\nsemi-amplitude = 2.5\n\n[mcmc]\nmcmc = true\nseed = 42\n",
        );
        let cfg = FileConfig::load(&path).unwrap();
        assert_eq!(cfg.get::<String>("out").unwrap().unwrap(), "results");
        assert_eq!(cfg.get::<String>("grid-dims").unwrap().unwrap(), "10x5");
        assert_eq!(cfg.get::<f64>("semi-amplitude").unwrap().unwrap(), 2.5);
        assert!(cfg.get::<bool>("mcmc").unwrap().unwrap());
        assert_eq!(cfg.get::<u64>("seed").unwrap().unwrap(), 42);
        assert!(cfg.get::<String>("response").unwrap().is_none());
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let path = write_temp("unknown.toml", "sede = 3\n");
        let err = FileConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("unknown key 'sede'"), "{err}");

        let path = write_temp("dup.toml", "seed = 1\n[mcmc]\nseed = 2\n");
        let err = FileConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("more than once"), "{err}");
    }

    #[test]
    fn non_scalar_values_are_rejected() {
        let path = write_temp("array.toml", "covariates = [\"a\", \"b\"]\n");
        let err = FileConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("must be a scalar"), "{err}");
    }

    #[test]
    fn flag_overrides_file() {
        let path = write_temp("prec.toml", "beta-precision = 0.5\nlagged = true\n");
        let cfg = FileConfig::load(&path).unwrap();
        assert_eq!(pick(Some(2.0), &cfg, "beta-precision").unwrap(), Some(2.0));
        assert_eq!(pick::<f64>(None, &cfg, "beta-precision").unwrap(), Some(0.5));
        assert!(pick_flag(false, &cfg, "lagged").unwrap());
        assert!(!pick_flag(false, &cfg, "mcmc").unwrap());
    }

    #[test]
    fn dims_and_pairs_parse() {
        assert_eq!(parse_dims("20x20").unwrap(), (20, 20));
        assert_eq!(parse_dims(" 160X40 ").unwrap(), (160, 40));
        assert!(parse_dims("20").is_err());
        assert!(parse_dims("axb").is_err());
        assert_eq!(parse_pair("grid-center", "0.5,-0.1").unwrap(), (0.5, -0.1));
        assert!(parse_pair("grid-se", "0.5").is_err());
        assert_eq!(split_list(" a, b ,,c "), vec!["a", "b", "c"]);
        assert!(split_list("").is_empty());
    }

    #[test]
    fn grid_resolution() {
        match build_grid((20, 10), None, None, 3.0).unwrap() {
            GridSetting::Auto {
                dims,
                semi_amplitude,
            } => {
                assert_eq!(dims, (20, 10));
                assert_eq!(semi_amplitude, 3.0);
            }
            other => panic!("expected automatic lattice, got {other:?}"),
        }

        match build_grid((20, 10), Some((0.93, 0.0)), Some((0.02, 0.1)), 2.0).unwrap() {
            GridSetting::Manual(spec) => {
                assert!((spec.center.rho() - 0.93).abs() < 1e-12);
                let expect = delta_variance(0.93, 0.02).unwrap().sqrt();
                assert!((spec.internal_sds.0 - expect).abs() < 1e-12);
                assert_eq!(spec.dims, (20, 10));
            }
            other => panic!("expected pinned lattice, got {other:?}"),
        }

        let err = build_grid((20, 10), Some((0.5, 0.5)), None, 3.0).unwrap_err();
        assert!(err.to_string().contains("together"));
    }
}
