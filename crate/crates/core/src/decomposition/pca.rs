use nalgebra::{DMatrix, DVector};

use super::eigen::{eigh_sym, numerical_rank};
use crate::dataset::{Dataset, Scaler};
use crate::error::{Error, Result};

/// Linear PCA of standardized data: `X = T P' + E`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub(crate) loadings: DMatrix<f64>,
    pub(crate) scores: DMatrix<f64>,
    pub(crate) eigenvalues: DVector<f64>,
    pub(crate) explained_variance_ratio: Vec<f64>,
    pub(crate) scaler: Scaler,
    pub(crate) x_train: DMatrix<f64>,
}

impl PcaModel {
    /// Loadings `P`, d x H, orthonormal columns.
    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    /// Training scores `T = X P`, n x H.
    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    /// Top-H covariance eigenvalues, nonincreasing.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn explained_variance_ratio(&self) -> &[f64] {
        &self.explained_variance_ratio
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    pub fn x_train(&self) -> &DMatrix<f64> {
        &self.x_train
    }

    pub fn h(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn d(&self) -> usize {
        self.loadings.nrows()
    }

    /// Scores of new standardized samples.
    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.d() {
            return Err(Error::Dimension(format!(
                "model has {} variables, data has {}",
                self.d(),
                x.ncols()
            )));
        }
        Ok(x * &self.loadings)
    }
}

pub fn pca_fit(ds: &Dataset, h: usize) -> Result<PcaModel> {
    fit_matrix(&ds.x, ds.scaler.clone(), h)
}

pub(crate) fn fit_matrix(x: &DMatrix<f64>, scaler: Scaler, h: usize) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::Invalid("PCA needs at least 2 samples".into()));
    }
    if h < 1 || h > (n - 1).min(d) {
        return Err(Error::Invalid(format!(
            "number of components {h} outside 1..={}",
            (n - 1).min(d)
        )));
    }
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let (values, vectors) = eigh_sym(&cov)?;
    let rank = numerical_rank(&values);
    if h > rank {
        return Err(Error::RankDeficient { requested: h, rank });
    }
    let total = cov.trace();
    let loadings = vectors.columns(0, h).into_owned();
    let eigenvalues = values.rows(0, h).into_owned();
    Ok(PcaModel {
        scores: x * &loadings,
        explained_variance_ratio: eigenvalues.iter().map(|l| l / total).collect(),
        loadings,
        eigenvalues,
        scaler,
        x_train: x.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Role;
    use approx::assert_abs_diff_eq;

    fn ds(x: DMatrix<f64>) -> Dataset {
        let d = x.ncols();
        Dataset {
            x,
            role: Role::NormalCalibration,
            fault_onset: None,
            scaler: Scaler::identity(d),
        }
    }

    #[test]
    fn line_data_rank_one() {
        let x = DMatrix::from_row_slice(4, 2, &[-1.5, -1.5, -0.5, -0.5, 0.5, 0.5, 1.5, 1.5]);
        let m = pca_fit(&ds(x), 1).unwrap();
        let r = 0.5f64.sqrt();
        assert_abs_diff_eq!(m.loadings()[(0, 0)], r, epsilon = 1e-12);
        assert_abs_diff_eq!(m.loadings()[(1, 0)], r, epsilon = 1e-12);
        assert_abs_diff_eq!(m.explained_variance_ratio()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rank_deficient_request() {
        let x = DMatrix::from_row_slice(4, 2, &[-1.5, -1.5, -0.5, -0.5, 0.5, 0.5, 1.5, 1.5]);
        assert!(matches!(
            pca_fit(&ds(x), 2),
            Err(Error::RankDeficient { requested: 2, rank: 1 })
        ));
    }

    #[test]
    fn component_count_bounds() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
        assert!(pca_fit(&ds(x.clone()), 0).is_err());
        assert!(pca_fit(&ds(x.clone()), 3).is_err());
        assert!(pca_fit(&ds(x), 2).is_ok());
    }

    #[test]
    fn projecting_training_data_gives_scores() {
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 0.2, -0.3, -0.4, 1.0, 0.1, 0.0, -0.7, 0.9, -0.6, -0.5, -0.7]);
        let m = pca_fit(&ds(x.clone()), 2).unwrap();
        assert_eq!(m.project(&x).unwrap(), *m.scores());
        assert!(m.project(&DMatrix::zeros(1, 2)).is_err());
    }
}
