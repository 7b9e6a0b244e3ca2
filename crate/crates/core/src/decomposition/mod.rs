//! Linear PCA, kernel PCA and model persistence.

pub(crate) mod eigen;
mod kpca;
mod pca;

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use eigen::{eigh_sym, eigh_top, numerical_rank};
pub use kpca::{kpca_fit, kpca_project, KernelProjection, KpcaModel};
pub use pca::{pca_fit, PcaModel};

use crate::dataset::Scaler;
use crate::error::{Error, Result};
use crate::kernel::{double_center, kernel_matrix, CenteringStats, KernelConfig};

pub const DEFAULT_COMPONENTS: usize = 4;

/// A fitted monitoring model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Pca(PcaModel),
    Kpca(KpcaModel),
}

impl Model {
    pub fn h(&self) -> usize {
        match self {
            Model::Pca(m) => m.h(),
            Model::Kpca(m) => m.h(),
        }
    }

    pub fn d(&self) -> usize {
        match self {
            Model::Pca(m) => m.d(),
            Model::Kpca(m) => m.d(),
        }
    }

    pub fn scaler(&self) -> &Scaler {
        match self {
            Model::Pca(m) => m.scaler(),
            Model::Kpca(m) => m.scaler(),
        }
    }

    pub fn x_train(&self) -> &DMatrix<f64> {
        match self {
            Model::Pca(m) => m.x_train(),
            Model::Kpca(m) => m.x_train(),
        }
    }

    pub fn calibration_scores(&self) -> &DMatrix<f64> {
        match self {
            Model::Pca(m) => m.scores(),
            Model::Kpca(m) => m.scores(),
        }
    }

    pub fn explained_variance(&self) -> &[f64] {
        explained_variance(self)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Pca(_) => "pca",
            Model::Kpca(_) => "kpca",
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDoc::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Model> {
        serde_json::from_str::<ModelDoc>(text)?.into_model()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Model::from_json(&text)
    }
}

/// Share of the total (positive) variance captured by each retained component.
pub fn explained_variance(model: &Model) -> &[f64] {
    match model {
        Model::Pca(m) => m.explained_variance_ratio(),
        Model::Kpca(m) => m.explained_variance_ratio(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
enum ModelDoc {
    Pca {
        h: usize,
        scaler: Scaler,
        n: usize,
        d: usize,
        /// d x H, row-major.
        loadings: Vec<f64>,
        eigenvalues: Vec<f64>,
        explained_variance_ratio: Vec<f64>,
        x_train: String,
    },
    Kpca {
        h: usize,
        scaler: Scaler,
        kernel: KernelConfig,
        n: usize,
        d: usize,
        /// n x H, row-major.
        alpha: Vec<f64>,
        eigenvalues: Vec<f64>,
        explained_variance_ratio: Vec<f64>,
        centering: CenteringStats,
        x_train: String,
    },
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(rows: usize, cols: usize, v: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "{what} has {} entries, expected {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, v))
}

fn encode_matrix(m: &DMatrix<f64>) -> String {
    let bytes: Vec<u8> = row_major(m).iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_matrix(text: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::Invalid(format!("x_train is not valid base64: {e}")))?;
    if bytes.len() != rows * cols * 8 {
        return Err(Error::Dimension(format!(
            "x_train holds {} bytes, expected {rows}x{cols} doubles",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    from_row_major(rows, cols, &values, "x_train")
}

impl From<&Model> for ModelDoc {
    fn from(model: &Model) -> Self {
        match model {
            Model::Pca(m) => ModelDoc::Pca {
                h: m.h(),
                scaler: m.scaler.clone(),
                n: m.x_train.nrows(),
                d: m.d(),
                loadings: row_major(&m.loadings),
                eigenvalues: m.eigenvalues.iter().copied().collect(),
                explained_variance_ratio: m.explained_variance_ratio.clone(),
                x_train: encode_matrix(&m.x_train),
            },
            Model::Kpca(m) => ModelDoc::Kpca {
                h: m.h(),
                scaler: m.scaler.clone(),
                kernel: m.kernel.clone(),
                n: m.n(),
                d: m.d(),
                alpha: row_major(&m.alpha),
                eigenvalues: m.eigenvalues.iter().copied().collect(),
                explained_variance_ratio: m.explained_variance_ratio.clone(),
                centering: m.centering.clone(),
                x_train: encode_matrix(&m.x_train),
            },
        }
    }
}

impl ModelDoc {
    fn into_model(self) -> Result<Model> {
        match self {
            ModelDoc::Pca {
                h,
                scaler,
                n,
                d,
                loadings,
                eigenvalues,
                explained_variance_ratio,
                x_train,
            } => {
                let x_train = decode_matrix(&x_train, n, d)?;
                let loadings = from_row_major(d, h, &loadings, "loadings")?;
                if eigenvalues.len() != h || explained_variance_ratio.len() != h || scaler.dim() != d {
                    return Err(Error::Dimension("PCA model fields disagree on H or d".into()));
                }
                Ok(Model::Pca(PcaModel {
                    scores: &x_train * &loadings,
                    loadings,
                    eigenvalues: DVector::from_vec(eigenvalues),
                    explained_variance_ratio,
                    scaler,
                    x_train,
                }))
            }
            ModelDoc::Kpca {
                h,
                scaler,
                kernel,
                n,
                d,
                alpha,
                eigenvalues,
                explained_variance_ratio,
                centering,
                x_train,
            } => {
                let x_train = decode_matrix(&x_train, n, d)?;
                let alpha = from_row_major(n, h, &alpha, "alpha")?;
                if eigenvalues.len() != h
                    || explained_variance_ratio.len() != h
                    || scaler.dim() != d
                    || centering.row_means.len() != n
                {
                    return Err(Error::Dimension("kernel PCA model fields disagree on H, n or d".into()));
                }
                let mut k = kernel_matrix(&x_train, &x_train, &kernel)?.k;
                double_center(&mut k);
                Ok(Model::Kpca(KpcaModel {
                    scores: &k * &alpha,
                    k_centered: k,
                    x_train,
                    kernel,
                    scaler,
                    centering,
                    alpha,
                    eigenvalues: DVector::from_vec(eigenvalues),
                    explained_variance_ratio,
                }))
            }
        }
    }
}
