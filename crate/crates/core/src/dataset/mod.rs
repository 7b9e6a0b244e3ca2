//! Process data: loading, standardization against normal-operation statistics,
//! fault-onset bookkeeping and a synthetic process generator.

mod io;
mod synth;
pub mod te;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_matrix, parse_matrix, write_dat, MatrixFormat};
pub use synth::{synthesize, synthesize_raw, synthesize_test, synthesize_test_raw, FaultKind, SyntheticProcess};

/// One row of a variable legend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableInfo {
    /// 1-based position of the variable in a sample row.
    pub index: usize,
    pub name: String,
    pub description: String,
    pub unit: String,
}

/// Unscaled numeric table as read from disk or produced by the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMatrix {
    pub values: DMatrix<f64>,
    pub source: String,
    /// Column names taken from a CSV header, when one was present.
    pub variables: Option<Vec<VariableInfo>>,
}

impl RawMatrix {
    pub fn new(values: DMatrix<f64>, source: impl Into<String>) -> Result<Self> {
        let source = source.into();
        if values.nrows() < 2 || values.ncols() < 1 {
            return Err(Error::Invalid(format!(
                "{source}: need at least 2 samples and 1 variable, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            // column-major storage
            let (row, col) = (idx % values.nrows(), idx / values.nrows());
            return Err(Error::Parse {
                source_name: source,
                row: row + 1,
                col: col + 1,
                msg: "non-finite value".into(),
            });
        }
        Ok(RawMatrix {
            values,
            source,
            variables: None,
        })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    NormalCalibration,
    FaultyCalibration,
    Test,
}

/// Per-column location and scale used to put data on the normal-operation scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Column means and sample standard deviations (divisor n - 1).
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::Invalid("need at least 2 samples to fit a scaler".into()));
        }
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for (j, col) in x.column_iter().enumerate() {
            let m = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
            let s = var.sqrt();
            if !(s > f64::EPSILON * m.abs().max(1.0)) {
                return Err(Error::ZeroVariance(j + 1));
            }
            mean.push(m);
            std.push(s);
        }
        Ok(Scaler { mean, std })
    }

    pub fn identity(d: usize) -> Self {
        Scaler {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "scaler has {} columns, data has {}",
                self.dim(),
                x.ncols()
            )));
        }
        if let Some(j) = self.std.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Invalid(format!("scaler std for column {} is not positive", j + 1)));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.mean[j]) / self.std[j]
        }))
    }

    pub fn invert(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)] * self.std[j] + self.mean[j])
    }
}

/// Standardized samples together with the scaler that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub role: Role,
    /// 1-based index of the first faulty sample.
    pub fault_onset: Option<usize>,
    pub scaler: Scaler,
}

impl Dataset {
    /// Standardizes `raw`. Without a scaler the column statistics of `raw`
    /// itself are used; faulty and test partitions should pass the scaler of
    /// the normal calibration set.
    pub fn standardize(raw: &RawMatrix, scaler: Option<&Scaler>, role: Role) -> Result<Self> {
        let scaler = match scaler {
            Some(s) => s.clone(),
            None => Scaler::fit(&raw.values)?,
        };
        let x = scaler.apply(&raw.values)?;
        Ok(Dataset {
            x,
            role,
            fault_onset: None,
            scaler,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Sets the onset from the simulated time at which the fault starts.
    /// `floor(hours * 60 / sampling_minutes)` samples stay normal.
    pub fn mark_fault_onset(mut self, sampling_minutes: f64, fault_after_hours: f64) -> Result<Self> {
        if !(sampling_minutes > 0.0) || !(fault_after_hours >= 0.0) {
            return Err(Error::Invalid(
                "sampling interval must be positive and fault time non-negative".into(),
            ));
        }
        let normal = (fault_after_hours * 60.0 / sampling_minutes + 1e-9).floor() as usize;
        self.set_onset(normal + 1)?;
        Ok(self)
    }

    pub fn with_onset(mut self, onset: usize) -> Result<Self> {
        self.set_onset(onset)?;
        Ok(self)
    }

    fn set_onset(&mut self, onset: usize) -> Result<()> {
        if onset < 1 || onset > self.n() {
            return Err(Error::Invalid(format!(
                "fault onset at sample {onset} lies outside a dataset of {} samples",
                self.n()
            )));
        }
        self.fault_onset = Some(onset);
        Ok(())
    }

    /// 0 before the onset, 1 from the onset on; all 0 without an onset, all 1
    /// for a faulty calibration set.
    pub fn labels(&self) -> Labels {
        let n = self.n();
        let y = match (self.role, self.fault_onset) {
            (_, Some(onset)) => (0..n).map(|i| u8::from(i + 1 >= onset)).collect(),
            (Role::FaultyCalibration, None) => vec![1; n],
            _ => vec![0; n],
        };
        Labels(y)
    }

    /// Standardized rows at the given 0-based positions.
    pub fn select_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        self.x.select_rows(rows)
    }

    /// Vertically stacks datasets sharing one scaler.
    pub fn concat(parts: &[&Dataset], role: Role) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("nothing to concatenate".into()))?;
        let d = first.d();
        if parts.iter().any(|p| p.d() != d || p.scaler != first.scaler) {
            return Err(Error::Dimension(
                "datasets must share the variable count and scaler".into(),
            ));
        }
        let n: usize = parts.iter().map(|p| p.n()).sum();
        let mut x = DMatrix::zeros(n, d);
        let mut at = 0;
        for p in parts {
            x.rows_mut(at, p.n()).copy_from(&p.x);
            at += p.n();
        }
        Ok(Dataset {
            x,
            role,
            fault_onset: None,
            scaler: first.scaler.clone(),
        })
    }
}

/// Class labels, 0 = normal, 1 = faulty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels(Vec<u8>);

impl Labels {
    pub fn new(y: Vec<u8>) -> Result<Self> {
        if let Some(i) = y.iter().position(|&v| v > 1) {
            return Err(Error::Invalid(format!("label {} at position {} is not 0 or 1", y[i], i + 1)));
        }
        Ok(Labels(y))
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
