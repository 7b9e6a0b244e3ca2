use std::path::{Path, PathBuf};

use kmspc::dataset::{load_matrix, Dataset, MatrixFormat, RawMatrix, Role};
use kmspc::kernel::KernelConfig;
use kmspc::mspc::LimitMethod;
use kmspc::optim::{GaOptions, KfConfig, NmOptions, OptimMethod};
use kmspc::{Error, Result};
use serde::{Deserialize, Serialize};

/// A data file, optionally stored variable-major or with leading rows to drop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataRef {
    Path(PathBuf),
    Spec {
        path: PathBuf,
        /// The file holds one variable per row.
        #[serde(default)]
        transpose: bool,
        /// Samples dropped from the start (after transposing).
        #[serde(default)]
        skip_rows: usize,
    },
}

impl DataRef {
    pub fn path(&self) -> &Path {
        match self {
            DataRef::Path(p) | DataRef::Spec { path: p, .. } => p,
        }
    }

    fn with_path(&self, path: PathBuf) -> DataRef {
        match self {
            DataRef::Path(_) => DataRef::Path(path),
            DataRef::Spec { transpose, skip_rows, .. } => DataRef::Spec {
                path,
                transpose: *transpose,
                skip_rows: *skip_rows,
            },
        }
    }

    pub fn load(&self) -> Result<RawMatrix> {
        let path = self.path();
        let raw = load_matrix(path, MatrixFormat::from_path(path))?;
        let (transpose, skip) = match self {
            DataRef::Path(_) => (false, 0),
            DataRef::Spec { transpose, skip_rows, .. } => (*transpose, *skip_rows),
        };
        let mut values = if transpose { raw.values.transpose() } else { raw.values };
        if skip > 0 {
            if skip + 2 > values.nrows() {
                return Err(Error::Invalid(format!(
                    "{}: skipping {skip} rows leaves fewer than 2 samples",
                    path.display()
                )));
            }
            values = values.rows(skip, values.nrows() - skip).into_owned();
        }
        let mut out = RawMatrix::new(values, raw.source)?;
        out.variables = raw.variables;
        Ok(out)
    }
}

/// Fault onset of a test sequence: a 1-based sample index or a time offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OnsetSpec {
    Index(usize),
    Time {
        sampling_minutes: f64,
        fault_after_hours: f64,
    },
}

impl OnsetSpec {
    pub fn resolve(self, n: usize) -> Result<usize> {
        let onset = match self {
            OnsetSpec::Index(i) => i,
            OnsetSpec::Time {
                sampling_minutes,
                fault_after_hours,
            } => {
                if !(sampling_minutes > 0.0 && fault_after_hours >= 0.0) {
                    return Err(Error::Invalid("onset time needs a positive sampling interval".into()));
                }
                (fault_after_hours * 60.0 / sampling_minutes + 1e-9).floor() as usize + 1
            }
        };
        if onset < 2 || onset > n + 1 {
            return Err(Error::Invalid(format!("onset {onset} outside 2..={} for {n} samples", n + 1)));
        }
        Ok(onset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Pca,
    #[default]
    Kpca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: OptimMethod,
    pub kf: KfConfig,
    pub nelder_mead: NmOptions,
    pub ga: GaOptions,
    /// Search interval applied to every parameter by the genetic algorithm.
    pub bounds: [f64; 2],
    /// Candidate sigma values for line search.
    pub grid: Vec<f64>,
    /// Logistic temperature of the baseline loss; raw loss when absent.
    pub baseline_tau: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            method: OptimMethod::KernelFlows,
            kf: KfConfig::default(),
            nelder_mead: NmOptions::default(),
            ga: GaOptions::default(),
            bounds: [1e-2, 1e2],
            grid: (0..25).map(|i| 10f64.powf(-1.0 + 3.0 * i as f64 / 24.0)).collect(),
            baseline_tau: None,
        }
    }
}

/// Everything one run needs. Relative paths in a config file are resolved
/// against the file's directory; paths given as flags against the working
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub normal: Option<DataRef>,
    pub faulty: Vec<DataRef>,
    pub test: Option<DataRef>,
    /// Model document used by `monitor`.
    pub model_file: Option<PathBuf>,
    pub model: ModelKind,
    pub kernel: Option<KernelConfig>,
    pub h: usize,
    pub limit_method: LimitMethod,
    pub optimizer: OptimizerConfig,
    pub output_dir: PathBuf,
    pub seed: Option<u64>,
    pub onset: Option<OnsetSpec>,
    pub log_scale: bool,
    /// Write wall-clock timings; off by default so reruns are byte-identical.
    pub record_timings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            normal: None,
            faulty: Vec::new(),
            test: None,
            model_file: None,
            model: ModelKind::Kpca,
            kernel: None,
            h: kmspc::decomposition::DEFAULT_COMPONENTS,
            limit_method: LimitMethod::default(),
            optimizer: OptimizerConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: None,
            onset: None,
            log_scale: false,
            record_timings: false,
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Reads a config file, or the `config` section of a run manifest.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let is_manifest = value.get("command").is_some() && value.get("config").is_some();
        let cfg_value = if is_manifest { value["config"].clone() } else { value };
        let mut cfg: RunConfig = serde_json::from_value(cfg_value)?;
        if !is_manifest {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |d: &DataRef| d.with_path(resolve(base, d.path()));
        self.normal = self.normal.as_ref().map(fix);
        self.faulty = self.faulty.iter().map(fix).collect();
        self.test = self.test.as_ref().map(fix);
        self.model_file = self.model_file.as_ref().map(|p| resolve(base, p));
        self.output_dir = resolve(base, &self.output_dir);
    }

    /// Makes every path absolute against the working directory, so a manifest
    /// written from this config can be replayed from anywhere.
    pub fn absolutize(&mut self) -> Result<()> {
        let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
        self.resolve_paths(&cwd);
        Ok(())
    }

    /// Checks referenced files exist and the settings are coherent.
    pub fn validate(&self, needs_faulty: bool) -> Result<()> {
        let normal = self
            .normal
            .as_ref()
            .ok_or_else(|| Error::Invalid("no normal calibration data configured".into()))?;
        let mut refs = vec![normal];
        if needs_faulty && self.faulty.is_empty() {
            return Err(Error::Invalid("no faulty calibration data configured".into()));
        }
        refs.extend(self.faulty.iter());
        refs.extend(self.test.iter());
        for r in refs {
            if !r.path().is_file() {
                return Err(Error::io(
                    r.path(),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "data file not found"),
                ));
            }
        }
        if self.h == 0 {
            return Err(Error::Invalid("h must be at least 1".into()));
        }
        if self.model == ModelKind::Kpca && self.kernel.is_none() {
            return Err(Error::Invalid("model kpca needs a kernel configuration".into()));
        }
        Ok(())
    }
}

/// Standardized normal and faulty data, both on the normal scaler.
pub struct LoadedData {
    pub normal: Dataset,
    pub faulty: Vec<Dataset>,
}

pub fn load_data(cfg: &RunConfig) -> Result<LoadedData> {
    let normal_ref = cfg
        .normal
        .as_ref()
        .ok_or_else(|| Error::Invalid("no normal calibration data configured".into()))?;
    let normal = Dataset::standardize(&normal_ref.load()?, None, Role::NormalCalibration)?;
    let faulty = cfg
        .faulty
        .iter()
        .map(|r| Dataset::standardize(&r.load()?, Some(&normal.scaler), Role::FaultyCalibration))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedData { normal, faulty })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn onset_resolution() {
        let te = OnsetSpec::Time {
            sampling_minutes: 3.0,
            fault_after_hours: 8.0,
        };
        assert_eq!(te.resolve(960).unwrap(), 161);
        assert_eq!(OnsetSpec::Index(11).resolve(10).unwrap(), 11);
        assert!(OnsetSpec::Index(12).resolve(10).is_err());
        assert!(OnsetSpec::Index(1).resolve(10).is_err());
    }

    #[test]
    fn config_defaults_and_paths() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"normal": "n.dat", "faulty": [{"path": "f.dat", "skip_rows": 20}], "seed": 3}"#,
        )
        .unwrap();
        assert_eq!(cfg.h, 4);
        assert_eq!(cfg.optimizer.kf.iterations, 300);
        let mut cfg = cfg;
        cfg.resolve_paths(Path::new("/data"));
        assert_eq!(cfg.normal.unwrap().path(), Path::new("/data/n.dat"));
        assert_eq!(cfg.faulty[0].path(), Path::new("/data/f.dat"));
        assert_eq!(cfg.output_dir, PathBuf::from("/data/out"));
        assert!(serde_json::from_str::<RunConfig>(r#"{"normol": "x"}"#).is_err());
    }
}
