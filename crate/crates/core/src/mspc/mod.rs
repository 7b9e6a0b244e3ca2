//! Control charts: Hotelling T², SPEx, their limits and the monitoring loss.

mod export;
mod limits;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use export::{chart_csv, chart_svg, SvgOptions};
pub use limits::{
    chi2_upper_quantile, compute_limits, f_upper_quantile, limits_chi2, limits_f, limits_gaussian, quantile_bisect,
    ChartLimits, LimitMethod, ALARM_ALPHA, WARNING_ALPHA,
};

use crate::decomposition::{KpcaModel, Model, PcaModel};
use crate::error::{Error, Result};

/// `T²_i = t_i (T_cal' T_cal)^-1 t_i' / (n - 1)`.
pub fn t2_statistic(t_cal: &DMatrix<f64>, t_eval: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (n, h) = t_cal.shape();
    if h == 0 {
        return Err(Error::Invalid("T² needs at least one component".into()));
    }
    if n < 2 {
        return Err(Error::Invalid("T² needs at least 2 calibration samples".into()));
    }
    if t_eval.ncols() != h {
        return Err(Error::Dimension(format!(
            "evaluation scores have {} columns, calibration scores {h}",
            t_eval.ncols()
        )));
    }
    let gram = t_cal.transpose() * t_cal;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("score covariance is singular".into()))?;
    let solved = chol.solve(&t_eval.transpose());
    let denom = (n - 1) as f64;
    Ok((0..t_eval.nrows())
        .map(|i| t_eval.row(i).dot(&solved.column(i).transpose()) / denom)
        .collect())
}

/// Squared residual after projecting onto the PCA loadings.
pub fn spex_linear(model: &PcaModel, x_eval: &DMatrix<f64>) -> Result<Vec<f64>> {
    let t = model.project(x_eval)?;
    let resid = x_eval - t * model.loadings().transpose();
    Ok(resid.row_iter().map(|r| r.norm_squared()).collect())
}

/// Feature-space reconstruction error `k~(x, x) - sum_h t_h²`, clipped at 0.
pub fn spex_kernel(model: &KpcaModel, x_eval: &DMatrix<f64>) -> Result<Vec<f64>> {
    let p = model.project_full(x_eval)?;
    Ok(kernel_residual(&p.scores, &p.self_centered))
}

fn kernel_residual(scores: &DMatrix<f64>, self_centered: &[f64]) -> Vec<f64> {
    self_centered
        .iter()
        .enumerate()
        .map(|(i, kxx)| (kxx - scores.row(i).norm_squared()).max(0.0))
        .collect()
}

/// Scores and SPEx of `x` under either model kind.
pub fn model_statistics(model: &Model, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    match model {
        Model::Pca(m) => Ok((m.project(x)?, spex_linear(m, x)?)),
        Model::Kpca(m) => {
            let p = m.project_full(x)?;
            let spex = kernel_residual(&p.scores, &p.self_centered);
            Ok((p.scores, spex))
        }
    }
}

/// T² and SPEx of the model's own calibration data.
pub fn calibration_statistics(model: &Model) -> Result<(Vec<f64>, Vec<f64>)> {
    let t_cal = model.calibration_scores();
    let spex = match model {
        Model::Pca(m) => spex_linear(m, m.x_train())?,
        Model::Kpca(m) => {
            let diag: Vec<f64> = m.k_centered().diagonal().iter().copied().collect();
            kernel_residual(m.scores(), &diag)
        }
    };
    Ok((t2_statistic(t_cal, t_cal)?, spex))
}

pub fn calibrate_limits(model: &Model, method: LimitMethod) -> Result<ChartLimits> {
    let (t2, spex) = calibration_statistics(model)?;
    compute_limits(&t2, &spex, model.x_train().nrows(), model.h(), method)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlChart {
    pub t2: Vec<f64>,
    pub spex: Vec<f64>,
    pub limits: ChartLimits,
    /// 1-based index of the first faulty sample, if known.
    pub fault_onset: Option<usize>,
}

impl ControlChart {
    pub fn len(&self) -> usize {
        self.t2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t2.is_empty()
    }

    pub fn t2_alarms(&self) -> Vec<bool> {
        self.t2.iter().map(|&v| v > self.limits.t2_alarm).collect()
    }

    pub fn spex_alarms(&self) -> Vec<bool> {
        self.spex.iter().map(|&v| v > self.limits.spex_limit).collect()
    }

    pub fn combined_alarms(&self) -> Vec<bool> {
        self.t2_alarms()
            .into_iter()
            .zip(self.spex_alarms())
            .map(|(a, b)| a || b)
            .collect()
    }
}

/// Projects `x_eval` and evaluates both charts against limits derived from
/// the model's calibration data.
pub fn build_chart(model: &Model, x_eval: &DMatrix<f64>, method: LimitMethod) -> Result<ControlChart> {
    let limits = calibrate_limits(model, method)?;
    build_chart_with_limits(model, x_eval, limits)
}

pub fn build_chart_with_limits(model: &Model, x_eval: &DMatrix<f64>, limits: ChartLimits) -> Result<ControlChart> {
    let (scores, spex) = model_statistics(model, x_eval)?;
    let t2 = t2_statistic(model.calibration_scores(), &scores)?;
    Ok(ControlChart {
        t2,
        spex,
        limits,
        fault_onset: None,
    })
}

/// `1 - (eta_n + eta_f) / 2` for alarm decisions against true fault labels.
/// With no faulty sample the faulty term counts as fully correct; with no
/// normal sample, the normal term does.
pub fn balanced_loss(alarm: &[bool], faulty: &[bool]) -> f64 {
    let (mut n_norm, mut ok_norm, mut n_fault, mut ok_fault) = (0usize, 0usize, 0usize, 0usize);
    for (&a, &f) in alarm.iter().zip(faulty) {
        if f {
            n_fault += 1;
            ok_fault += a as usize;
        } else {
            n_norm += 1;
            ok_norm += !a as usize;
        }
    }
    let rate = |ok: usize, n: usize| if n == 0 { 1.0 } else { ok as f64 / n as f64 };
    1.0 - (rate(ok_norm, n_norm) + rate(ok_fault, n_fault)) / 2.0
}

/// Monitoring performance of one alarm rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleScore {
    pub loss: f64,
    /// Fraction of pre-onset samples without alarm.
    pub eta_normal: f64,
    /// Fraction of post-onset samples in alarm; `None` without a faulty part.
    pub eta_faulty: Option<f64>,
    pub false_alarm_rate: f64,
    /// First post-onset alarm index minus onset.
    pub detection_delay: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmrReport {
    pub onset: usize,
    pub n_samples: usize,
    pub has_faulty_part: bool,
    pub t2: RuleScore,
    pub spex: RuleScore,
    pub combined: RuleScore,
}

fn score_rule(alarm: &[bool], onset: usize) -> RuleScore {
    let split = onset - 1;
    let (pre, post) = alarm.split_at(split);
    let eta_normal = pre.iter().filter(|a| !**a).count() as f64 / pre.len() as f64;
    let eta_faulty = (!post.is_empty()).then(|| post.iter().filter(|a| **a).count() as f64 / post.len() as f64);
    let faulty: Vec<bool> = (0..alarm.len()).map(|i| i >= split).collect();
    RuleScore {
        loss: balanced_loss(alarm, &faulty),
        eta_normal,
        eta_faulty,
        false_alarm_rate: 1.0 - eta_normal,
        detection_delay: post.iter().position(|a| *a),
    }
}

/// Per-statistic and combined CMR losses for a 1-based onset. `onset = m + 1`
/// is accepted for a sequence without faulty part; the faulty term is then
/// excluded and `has_faulty_part` is false.
pub fn cmr_report(chart: &ControlChart, onset: usize) -> Result<CmrReport> {
    let m = chart.len();
    if onset < 2 || onset > m + 1 {
        return Err(Error::Invalid(format!(
            "onset {onset} leaves no normal samples or lies beyond {} samples",
            m
        )));
    }
    Ok(CmrReport {
        onset,
        n_samples: m,
        has_faulty_part: onset <= m,
        t2: score_rule(&chart.t2_alarms(), onset),
        spex: score_rule(&chart.spex_alarms(), onset),
        combined: score_rule(&chart.combined_alarms(), onset),
    })
}

/// Like [`cmr_report`] but requiring samples on both sides of the onset.
pub fn cmr_loss(chart: &ControlChart, onset: usize) -> Result<CmrReport> {
    if onset > chart.len() {
        return Err(Error::Invalid(format!(
            "onset {onset} leaves no faulty samples among {}",
            chart.len()
        )));
    }
    cmr_report(chart, onset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, Role, Scaler};
    use crate::decomposition::pca_fit;
    use approx::assert_abs_diff_eq;

    fn limits() -> ChartLimits {
        ChartLimits {
            t2_warning: 1.0,
            t2_alarm: 2.0,
            t2_flim: 2.0,
            spex_warning: 1.0,
            spex_limit: 2.0,
            method: LimitMethod::GaussianChi2,
            t2_method: "test".into(),
            spex_method: "test".into(),
        }
    }

    fn chart(t2: Vec<f64>, spex: Vec<f64>) -> ControlChart {
        ControlChart {
            t2,
            spex,
            limits: limits(),
            fault_onset: None,
        }
    }

    #[test]
    fn t2_scalar_case() {
        let mut t_cal = DMatrix::zeros(11, 1);
        t_cal[(0, 0)] = 10f64.sqrt();
        let t = t2_statistic(&t_cal, &DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_abs_diff_eq!(t[0], 0.04, epsilon = 1e-15);
        let t = t2_statistic(&t_cal, &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(t[0], 0.0);
        assert!(t2_statistic(&DMatrix::zeros(5, 2), &DMatrix::zeros(1, 2)).is_err());
        assert!(t2_statistic(&t_cal, &DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn spex_linear_residual() {
        let x = DMatrix::from_row_slice(4, 2, &[-2.0, 0.01, -1.0, -0.01, 1.0, 0.01, 2.0, -0.01]);
        let ds = Dataset {
            x,
            role: Role::NormalCalibration,
            fault_onset: None,
            scaler: Scaler::identity(2),
        };
        let m = pca_fit(&ds, 1).unwrap();
        assert_abs_diff_eq!(m.loadings()[(0, 0)].abs(), 1.0, epsilon = 1e-3);
        let eval = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let s = spex_linear(&m, &eval).unwrap();
        let p = m.loadings().column(0);
        let resid = eval.row(0).transpose() - p * p.dot(&eval.row(0).transpose());
        assert_abs_diff_eq!(s[0], resid.norm_squared(), epsilon = 1e-12);
        assert_abs_diff_eq!(s[0], 16.0, epsilon = 0.1);
        let full = pca_fit(&ds, 2).unwrap();
        assert!(spex_linear(&full, &eval).unwrap()[0] < 1e-10);
    }

    #[test]
    fn cmr_examples() {
        let perfect = chart(vec![0.0, 0.0, 5.0, 5.0], vec![0.0; 4]);
        let r = cmr_loss(&perfect, 3).unwrap();
        assert_eq!(r.t2.loss, 0.0);
        assert_eq!(r.t2.detection_delay, Some(0));
        assert_eq!(r.spex.loss, 0.5);
        assert_eq!(r.combined.loss, 0.0);
        let silent = chart(vec![0.0; 4], vec![0.0; 4]);
        assert_eq!(cmr_loss(&silent, 3).unwrap().t2.loss, 0.5);
        assert_eq!(cmr_loss(&silent, 3).unwrap().t2.detection_delay, None);
        let loud = chart(vec![9.0; 4], vec![9.0; 4]);
        assert_eq!(cmr_loss(&loud, 3).unwrap().combined.loss, 0.5);
        assert!(cmr_loss(&loud, 5).is_err());
        assert!(cmr_loss(&loud, 1).is_err());
    }

    #[test]
    fn cmr_without_faulty_part() {
        let c = chart(vec![0.0, 3.0, 0.0, 0.0], vec![0.0; 4]);
        let r = cmr_report(&c, 5).unwrap();
        assert!(!r.has_faulty_part);
        assert_eq!(r.t2.eta_faulty, None);
        assert_abs_diff_eq!(r.t2.loss, 0.125);
        assert_abs_diff_eq!(r.t2.false_alarm_rate, 0.25);
    }

    #[test]
    fn balanced_loss_flips_with_decisions() {
        let alarm = [true, false, false, true, true];
        let faulty = [false, false, true, true, true];
        let flipped: Vec<bool> = alarm.iter().map(|a| !a).collect();
        let l = balanced_loss(&alarm, &faulty);
        assert_abs_diff_eq!(l + balanced_loss(&flipped, &faulty), 1.0, epsilon = 1e-15);
    }
}
