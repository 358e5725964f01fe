//! The regression dataset: response, design matrix, coefficient names.
//!
//! Row order is load-bearing. Row i of the dataset is region i of the
//! weights matrix; nothing here reorders, joins, or drops rows. The design
//! matrix always starts with an intercept column, so p >= 1, and full column
//! rank is verified at construction (a rank-deficient design would make the
//! coefficient posterior improper in the flat-prior limit and silently
//! ill-conditioned otherwise).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::weights::SpatialWeights;

/// Relative singular-value cutoff for the rank check.
const RANK_TOL: f64 = 1e-10;

/// Response vector and design matrix for n regions.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    names: Vec<String>,
}

impl Dataset {
    /// Validate and build a dataset. `x` must already contain the intercept
    /// column if one is wanted; [`Dataset::from_parts`] is the convenience
    /// path that prepends it.
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let n = y.len();
        let p = x.ncols();
        if x.nrows() != n {
            return Err(Error::Dimension {
                context: "design matrix rows".into(),
                expected: n,
                got: x.nrows(),
            });
        }
        if names.len() != p {
            return Err(Error::Dimension {
                context: "coefficient names".into(),
                expected: p,
                got: names.len(),
            });
        }
        if p == 0 || n <= p {
            return Err(Error::Invalid {
                name: "dataset".into(),
                reason: format!("needs n > p >= 1, got n = {n}, p = {p}"),
            });
        }
        if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid {
                name: "dataset".into(),
                reason: "response and covariates must be finite (no missing values)".into(),
            });
        }
        let svd = x.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > RANK_TOL * smax)
            .count();
        if rank < p {
            return Err(Error::RankDeficient { rank, cols: p });
        }
        Ok(Dataset { y, x, names })
    }

    /// Build from a response and covariate columns, prepending the intercept.
    pub fn from_parts(
        y: Vec<f64>,
        covariates: Vec<(String, Vec<f64>)>,
        intercept_name: &str,
    ) -> Result<Self> {
        let n = y.len();
        let p = covariates.len() + 1;
        let mut x = DMatrix::zeros(n, p);
        let mut names = Vec::with_capacity(p);
        x.column_mut(0).fill(1.0);
        names.push(intercept_name.to_string());
        for (c, (name, col)) in covariates.into_iter().enumerate() {
            if col.len() != n {
                return Err(Error::Dimension {
                    context: format!("covariate '{name}'"),
                    expected: n,
                    got: col.len(),
                });
            }
            x.column_mut(c + 1).copy_from(&DVector::from_vec(col));
            names.push(name);
        }
        Self::new(DVector::from_vec(y), x, names)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Append spatially lagged copies of the non-intercept covariates
    /// (Durbin-style augmentation). The intercept is skipped because its lag
    /// under a row-standardized matrix is the intercept again.
    pub fn augment_lagged(&self, w: &SpatialWeights) -> Result<Self> {
        let p = self.p();
        if p < 2 {
            return Err(Error::Invalid {
                name: "dataset".into(),
                reason: "no covariates to lag (design is intercept-only)".into(),
            });
        }
        if w.n() != self.n() {
            return Err(Error::Dimension {
                context: "weights for lag augmentation".into(),
                expected: self.n(),
                got: w.n(),
            });
        }
        let covs = self.x.columns(1, p - 1).into_owned();
        let lagged = w.lag(&covs)?;
        let mut x = DMatrix::zeros(self.n(), 2 * p - 1);
        x.columns_mut(0, p).copy_from(&self.x);
        x.columns_mut(p, p - 1).copy_from(&lagged);
        let mut names = self.names.clone();
        for j in 1..p {
            names.push(format!("lag.{}", self.names[j]));
        }
        Self::new(self.y.clone(), x, names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy() -> Dataset {
        Dataset::from_parts(
            vec![1.0, 2.0, 3.0, 5.0],
            vec![("x1".into(), vec![0.5, -1.0, 2.0, 0.0])],
            "(Intercept)",
        )
        .unwrap()
    }

    #[test]
    fn from_parts_prepends_the_intercept() {
        let d = toy();
        assert_eq!(d.n(), 4);
        assert_eq!(d.p(), 2);
        assert_eq!(d.names(), ["(Intercept)", "x1"]);
        for i in 0..4 {
            assert_eq!(d.x()[(i, 0)], 1.0);
        }
        assert_eq!(d.x()[(2, 1)], 2.0);
    }

    #[test]
    fn validation_rejects_degenerate_inputs() {
        // Missing value.
        let bad = Dataset::from_parts(
            vec![1.0, f64::NAN, 3.0, 4.0],
            vec![("x1".into(), vec![0.5, -1.0, 2.0, 0.0])],
            "b0",
        );
        assert!(bad.is_err());

        // n <= p.
        let small = Dataset::from_parts(vec![1.0, 2.0], vec![("a".into(), vec![1.0, 2.0])], "b0");
        assert!(small.is_err());

        // Duplicate column: rank deficient.
        let dup = Dataset::from_parts(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![("a".into(), vec![1.0, 1.0, 1.0, 1.0])],
            "b0",
        );
        assert!(matches!(
            dup,
            Err(Error::RankDeficient { rank: 1, cols: 2 })
        ));

        // Covariate of the wrong length.
        let len = Dataset::from_parts(vec![1.0, 2.0, 3.0], vec![("a".into(), vec![1.0])], "b0");
        assert!(matches!(len, Err(Error::Dimension { .. })));
    }

    #[test]
    fn lag_augmentation_appends_neighbor_averages() {
        let d = Dataset::from_parts(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![("x1".into(), vec![10.0, 20.0, 30.0, 40.0])],
            "(Intercept)",
        )
        .unwrap();
        // Chain: 1-2-3-4.
        let w = SpatialWeights::from_edges(
            4,
            &[
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 2, 1.0),
                (2, 1, 1.0),
                (2, 3, 1.0),
                (3, 2, 1.0),
            ],
        )
        .unwrap()
        .row_standardize()
        .unwrap();
        let aug = d.augment_lagged(&w).unwrap();
        assert_eq!(aug.p(), 3);
        assert_eq!(aug.names()[2], "lag.x1");
        assert_relative_eq!(aug.x()[(0, 2)], 20.0);
        assert_relative_eq!(aug.x()[(1, 2)], 20.0); // (10 + 30) / 2
        assert_relative_eq!(aug.x()[(2, 2)], 30.0); // (20 + 40) / 2
        assert_relative_eq!(aug.x()[(3, 2)], 30.0);

        let intercept_only =
            Dataset::from_parts(vec![1.0, 2.0, 3.0, 4.0], vec![], "(Intercept)").unwrap();
        assert!(intercept_only.augment_lagged(&w).is_err());
    }
}
