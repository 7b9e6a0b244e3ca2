//! Seeded stand-in for plant data so the whole pipeline can be exercised
//! without the benchmark files.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, RawMatrix, Role, Scaler};
use crate::error::{Error, Result};

const MODEL_SEED: u64 = 0x6b6d_7370_6300_0001;
const IDIOSYNCRATIC_NOISE: f64 = 0.2;
const REGIME_NOISE: f64 = 0.15;
/// Variables (0-based) carrying the fault for every fault kind.
const FAULTY_VARIABLES: [usize; 2] = [0, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// +2 standard deviations on the faulty variables.
    MeanStep,
    /// Standard deviation of the faulty variables multiplied by 3.
    VarianceShift,
    /// The faulty variables switch between two operating regimes at
    /// +-1 (shared regime per sample). Under the fault the regime coupling
    /// breaks and they settle in the gap around 0. The faulty samples lie
    /// inside the normal-operation ellipse, so linear charts see nothing.
    NonlinearCoupling,
}

/// Correlated latent-factor process with fixed loadings. The structure
/// depends only on `d`; samples depend on the caller's RNG.
#[derive(Debug, Clone)]
pub struct SyntheticProcess {
    d: usize,
    kind: FaultKind,
    loadings: DMatrix<f64>,
    offset: Vec<f64>,
    scale: Vec<f64>,
}

impl SyntheticProcess {
    pub fn new(d: usize, kind: FaultKind) -> Result<Self> {
        if d < 2 {
            return Err(Error::Invalid(format!("synthetic process needs d >= 2, got {d}")));
        }
        let q = (d / 5).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(MODEL_SEED ^ d as u64);
        let loadings = DMatrix::from_fn(d, q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let offset = (0..d).map(|_| rng.random_range(-50.0..50.0)).collect();
        let scale = (0..d).map(|_| rng.random_range(0.5..5.0)).collect();
        Ok(SyntheticProcess {
            d,
            kind,
            loadings,
            offset,
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn faulty_variables(&self) -> &'static [usize] {
        &FAULTY_VARIABLES
    }

    /// Standard deviation of variable `v` under normal operation, in raw units.
    pub fn normal_std(&self, v: usize) -> f64 {
        if self.kind == FaultKind::NonlinearCoupling && FAULTY_VARIABLES.contains(&v) {
            return self.scale[v] * (1.0 + REGIME_NOISE * REGIME_NOISE).sqrt();
        }
        let l2: f64 = self.loadings.row(v).iter().map(|l| l * l).sum();
        self.scale[v] * (l2 + IDIOSYNCRATIC_NOISE * IDIOSYNCRATIC_NOISE).sqrt()
    }

    /// Draws `n` raw samples from the normal (`faulty = false`) or faulty state.
    pub fn sample<R: Rng>(&self, n: usize, faulty: bool, rng: &mut R) -> DMatrix<f64> {
        let q = self.loadings.ncols();
        let mut x = DMatrix::zeros(n, self.d);
        let mut z = vec![0.0; q];
        for i in 0..n {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let regime = if rng.random::<bool>() { 1.0 } else { -1.0 };
            for v in 0..self.d {
                let e: f64 = rng.sample(StandardNormal);
                let latent: f64 = (0..q).map(|k| self.loadings[(v, k)] * z[k]).sum();
                let mut u = latent + IDIOSYNCRATIC_NOISE * e;
                if FAULTY_VARIABLES.contains(&v) {
                    match (self.kind, faulty) {
                        (FaultKind::MeanStep, true) => {
                            u += 2.0 * self.normal_std(v) / self.scale[v];
                        }
                        (FaultKind::VarianceShift, true) => u *= 3.0,
                        (FaultKind::NonlinearCoupling, false) => {
                            u = regime * (1.0 + REGIME_NOISE * e);
                        }
                        (FaultKind::NonlinearCoupling, true) => u = REGIME_NOISE * e,
                        _ => {}
                    }
                }
                x[(i, v)] = self.offset[v] + self.scale[v] * u;
            }
        }
        x
    }
}

/// Raw normal and faulty calibration matrices. Pure function of its arguments.
pub fn synthesize_raw(
    n_normal: usize,
    n_faulty: usize,
    d: usize,
    kind: FaultKind,
    seed: u64,
) -> Result<(RawMatrix, RawMatrix)> {
    if n_normal < 2 || n_faulty < 2 {
        return Err(Error::Invalid("synthetic partitions need at least 2 samples".into()));
    }
    let process = SyntheticProcess::new(d, kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = RawMatrix::new(process.sample(n_normal, false, &mut rng), "synthetic")?;
    let faulty = RawMatrix::new(process.sample(n_faulty, true, &mut rng), "synthetic")?;
    Ok((normal, faulty))
}

/// Normal and faulty calibration sets, both standardized with the normal
/// set's scaler.
pub fn synthesize(
    n_normal: usize,
    n_faulty: usize,
    d: usize,
    kind: FaultKind,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let (normal_raw, faulty_raw) = synthesize_raw(n_normal, n_faulty, d, kind, seed)?;
    let normal = Dataset::standardize(&normal_raw, None, Role::NormalCalibration)?;
    let faulty = Dataset::standardize(&faulty_raw, Some(&normal.scaler), Role::FaultyCalibration)?;
    Ok((normal, faulty))
}

/// Raw monitoring sequence: `n_before` normal samples, then `n_after` faulty ones.
pub fn synthesize_test_raw(n_before: usize, n_after: usize, d: usize, kind: FaultKind, seed: u64) -> Result<RawMatrix> {
    if n_before < 1 || n_after < 1 {
        return Err(Error::Invalid("test sequence needs samples on both sides of the onset".into()));
    }
    let process = SyntheticProcess::new(d, kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n_before + n_after, d);
    x.rows_mut(0, n_before).copy_from(&process.sample(n_before, false, &mut rng));
    x.rows_mut(n_before, n_after).copy_from(&process.sample(n_after, true, &mut rng));
    RawMatrix::new(x, "synthetic")
}

/// [`synthesize_test_raw`] standardized with `scaler`; the onset is `n_before + 1`.
pub fn synthesize_test(
    n_before: usize,
    n_after: usize,
    d: usize,
    kind: FaultKind,
    seed: u64,
    scaler: &Scaler,
) -> Result<Dataset> {
    let raw = synthesize_test_raw(n_before, n_after, d, kind, seed)?;
    Dataset::standardize(&raw, Some(scaler), Role::Test)?.with_onset(n_before + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bits() {
        let a = synthesize(200, 200, 10, FaultKind::MeanStep, 7).unwrap();
        let b = synthesize(200, 200, 10, FaultKind::MeanStep, 7).unwrap();
        assert_eq!(a, b);
        let c = synthesize(200, 200, 10, FaultKind::MeanStep, 8).unwrap();
        assert_ne!(a.0.x, c.0.x);
    }

    #[test]
    fn mean_step_shifts_by_two_std() {
        let process = SyntheticProcess::new(10, FaultKind::MeanStep).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let normal = process.sample(n, false, &mut rng);
        let faulty = process.sample(n, true, &mut rng);
        for v in 0..10 {
            let shift = (faulty.column(v).mean() - normal.column(v).mean()) / process.normal_std(v);
            let expected = if process.faulty_variables().contains(&v) { 2.0 } else { 0.0 };
            assert!((shift - expected).abs() < 0.05, "variable {v}: shift {shift}");
        }
    }

    #[test]
    fn variance_shift_triples_std() {
        let process = SyntheticProcess::new(6, FaultKind::VarianceShift).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let faulty = process.sample(20_000, true, &mut rng);
        let col = faulty.column(0);
        let m = col.mean();
        let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt();
        assert!((s / process.normal_std(0) - 3.0).abs() < 0.1);
    }

    #[test]
    fn coupling_fault_fills_the_regime_gap() {
        let process = SyntheticProcess::new(10, FaultKind::NonlinearCoupling).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 40_000;
        let normal = process.sample(n, false, &mut rng);
        let faulty = process.sample(n, true, &mut rng);
        let scaler = Scaler::fit(&normal).unwrap();
        let zn = scaler.apply(&normal).unwrap();
        let zf = scaler.apply(&faulty).unwrap();
        for v in 0..10 {
            assert!(zf.column(v).mean().abs() < 0.05, "mean of {v}");
        }
        // regime variables: normal ones sit at +-1, faulty ones in the gap
        let gap = |z: &DMatrix<f64>| z.column(0).iter().filter(|v| v.abs() < 0.5).count() as f64 / n as f64;
        assert!(gap(&zn) < 0.01);
        assert!(gap(&zf) > 0.95);
    }

    #[test]
    fn test_sequence_has_onset() {
        let (normal, _) = synthesize(50, 50, 5, FaultKind::MeanStep, 1).unwrap();
        let t = synthesize_test(30, 20, 5, FaultKind::MeanStep, 2, &normal.scaler).unwrap();
        assert_eq!(t.n(), 50);
        assert_eq!(t.fault_onset, Some(31));
        assert_eq!(t.role, Role::Test);
    }

    #[test]
    fn tiny_counts_rejected() {
        assert!(synthesize(1, 10, 3, FaultKind::MeanStep, 0).is_err());
    }
}
