use nalgebra::{DMatrix, DVector};

use super::eigen::{eigh_top, numerical_rank};
use crate::dataset::{Dataset, Scaler};
use crate::error::{Error, Result};
use crate::kernel::{center_rows_against, double_center, kernel_matrix, self_kernel, CenteringStats, KernelConfig};

/// Kernel PCA fitted on standardized training data.
///
/// `alpha` columns are scaled so the feature-space eigenvectors have unit
/// norm; training scores are `K~ alpha` and satisfy `T'T = diag(n lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KpcaModel {
    pub(crate) x_train: DMatrix<f64>,
    pub(crate) kernel: KernelConfig,
    pub(crate) scaler: Scaler,
    pub(crate) k_centered: DMatrix<f64>,
    pub(crate) centering: CenteringStats,
    pub(crate) alpha: DMatrix<f64>,
    pub(crate) eigenvalues: DVector<f64>,
    pub(crate) scores: DMatrix<f64>,
    pub(crate) explained_variance_ratio: Vec<f64>,
}

/// Scores of new samples plus their centered self-kernel values `k~(x, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelProjection {
    pub scores: DMatrix<f64>,
    pub self_centered: Vec<f64>,
}

impl KpcaModel {
    pub fn h(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn n(&self) -> usize {
        self.x_train.nrows()
    }

    pub fn d(&self) -> usize {
        self.x_train.ncols()
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    pub fn x_train(&self) -> &DMatrix<f64> {
        &self.x_train
    }

    /// Centered training kernel matrix.
    pub fn k_centered(&self) -> &DMatrix<f64> {
        &self.k_centered
    }

    pub fn centering(&self) -> &CenteringStats {
        &self.centering
    }

    /// Scaled coefficients, n x H.
    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    /// `lambda_h`, the covariance-operator eigenvalues (`K~` eigenvalues over n).
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn explained_variance_ratio(&self) -> &[f64] {
        &self.explained_variance_ratio
    }

    /// Same model keeping only the first `h` components (`h` may be 0).
    pub fn truncate(&self, h: usize) -> Result<KpcaModel> {
        if h > self.h() {
            return Err(Error::Invalid(format!("cannot keep {h} of {} components", self.h())));
        }
        let mut m = self.clone();
        m.alpha = self.alpha.columns(0, h).into_owned();
        m.eigenvalues = self.eigenvalues.rows(0, h).into_owned();
        m.scores = self.scores.columns(0, h).into_owned();
        m.explained_variance_ratio.truncate(h);
        Ok(m)
    }

    pub fn project_full(&self, x_new: &DMatrix<f64>) -> Result<KernelProjection> {
        if x_new.ncols() != self.d() {
            return Err(Error::Dimension(format!(
                "model has {} variables, data has {}",
                self.d(),
                x_new.ncols()
            )));
        }
        let mut k = kernel_matrix(x_new, &self.x_train, &self.kernel)?.k;
        let n = self.n() as f64;
        let row_means: Vec<f64> = k.row_iter().map(|r| r.sum() / n).collect();
        let self_centered = self_kernel(x_new, &self.kernel)
            .iter()
            .zip(&row_means)
            .map(|(kxx, m)| kxx - 2.0 * m + self.centering.grand_mean)
            .collect();
        center_rows_against(&mut k, &self.centering);
        Ok(KernelProjection {
            scores: k * &self.alpha,
            self_centered,
        })
    }
}

pub fn kpca_fit(ds: &Dataset, cfg: &KernelConfig, h: usize) -> Result<KpcaModel> {
    fit_matrix(&ds.x, ds.scaler.clone(), cfg, h)
}

pub fn kpca_project(model: &KpcaModel, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(model.project_full(x_new)?.scores)
}

/// Top-`h` eigenpairs of an already centered kernel matrix, with
/// coefficients scaled by `1/sqrt(mu)`. Returns `(alpha, mu, positive_sum)`
/// where `mu` are eigenvalues of `k` itself.
pub(crate) fn top_components(k: &DMatrix<f64>, h: usize) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let (values, vectors) = eigh_top(k, h)?;
    let rank = numerical_rank(&values);
    if h > rank {
        return Err(Error::RankDeficient { requested: h, rank });
    }
    let mut alpha = vectors.columns(0, h).into_owned();
    for (c, mut col) in alpha.column_iter_mut().enumerate() {
        col /= values[c].sqrt();
    }
    let positive: f64 = values.iter().filter(|&&v| v > 0.0).sum();
    Ok((alpha, values.rows(0, h).into_owned(), positive))
}

pub(crate) fn fit_matrix(x: &DMatrix<f64>, scaler: Scaler, cfg: &KernelConfig, h: usize) -> Result<KpcaModel> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Invalid("kernel PCA needs at least 2 samples".into()));
    }
    if h < 1 || h > n - 1 {
        return Err(Error::Invalid(format!("number of components {h} outside 1..={}", n - 1)));
    }
    let mut k = kernel_matrix(x, x, cfg)?.k;
    let centering = double_center(&mut k);
    let (alpha, mu, positive) = top_components(&k, h)?;
    let scores = &k * &alpha;
    Ok(KpcaModel {
        x_train: x.clone(),
        kernel: cfg.clone(),
        scaler,
        explained_variance_ratio: mu.iter().map(|m| m / positive).collect(),
        eigenvalues: mu / n as f64,
        k_centered: k,
        centering,
        alpha,
        scores,
    })
}
