use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};

/// Significance of the alarm and warning lines (99% and 95% confidence).
pub const ALARM_ALPHA: f64 = 0.01;
pub const WARNING_ALPHA: f64 = 0.05;

const QUANTILE_TOL: f64 = 1e-10;

/// How the chart limits are derived from calibration statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LimitMethod {
    /// Mean + 2/3 standard deviations for T², scaled chi-square for SPEx.
    #[default]
    GaussianChi2,
    /// F-distribution limits for T², scaled chi-square for SPEx.
    FChi2,
    /// Mean + 2/3 standard deviations for both statistics.
    Gaussian,
}

impl LimitMethod {
    pub fn name(self) -> &'static str {
        match self {
            LimitMethod::GaussianChi2 => "gaussian_chi2",
            LimitMethod::FChi2 => "f_chi2",
            LimitMethod::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian_chi2" => Ok(LimitMethod::GaussianChi2),
            "f_chi2" => Ok(LimitMethod::FChi2),
            "gaussian" => Ok(LimitMethod::Gaussian),
            other => Err(Error::Invalid(format!(
                "unknown limit method {other:?}; expected gaussian_chi2, f_chi2 or gaussian"
            ))),
        }
    }
}

fn mean_std(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 2 {
        return Err(Error::Invalid("limits need at least 2 calibration values".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// `(mean + 2 std, mean + 3 std)` of the calibration statistic.
pub fn limits_gaussian(stat_cal: &[f64]) -> Result<(f64, f64)> {
    let (mean, std) = mean_std(stat_cal)?;
    if !(std > 0.0) {
        return Err(Error::Numerical("calibration statistic has zero variance".into()));
    }
    Ok((mean + 2.0 * std, mean + 3.0 * std))
}

/// Smallest `x` with `cdf(x) >= p`, by bisection on `[0, inf)`.
pub fn quantile_bisect(cdf: impl Fn(f64) -> f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Invalid(format!("probability {p} outside (0, 1)")));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Numerical("quantile bracket diverged".into()));
        }
    }
    while hi - lo > QUANTILE_TOL * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("significance level {alpha} outside (0, 1)")))
    }
}

/// Upper-`alpha` quantile of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_upper_quantile(d1: f64, d2: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let f = FisherSnedecor::new(d1, d2).map_err(|e| Error::Invalid(format!("F distribution: {e}")))?;
    quantile_bisect(|x| f.cdf(x), 1.0 - alpha)
}

/// Upper-`alpha` quantile of a chi-square with (possibly fractional) `dof`.
pub fn chi2_upper_quantile(dof: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let c = ChiSquared::new(dof).map_err(|e| Error::Invalid(format!("chi-square distribution: {e}")))?;
    quantile_bisect(|x| c.cdf(x), 1.0 - alpha)
}

/// `h (n-1) / (n-h) F(h, n-h; alpha)` for the conventionally scaled T².
pub fn limits_f(n: usize, h: usize, alpha: f64) -> Result<f64> {
    if h < 1 || n < h + 2 {
        return Err(Error::Invalid(format!(
            "F limit needs 1 <= h <= n - 2, got h = {h}, n = {n}"
        )));
    }
    let (nf, hf) = (n as f64, h as f64);
    Ok(hf * (nf - 1.0) / (nf - hf) * f_upper_quantile(hf, nf - hf, alpha)?)
}

/// `g chi2(l; alpha)` with `g = var / (2 mean)` and `l = 2 mean² / var`.
pub fn limits_chi2(spex_cal: &[f64], alpha: f64) -> Result<f64> {
    let (mean, std) = mean_std(spex_cal)?;
    let var = std * std;
    if !(mean > 0.0) || !(var > 0.0) {
        return Err(Error::Numerical(
            "SPEx calibration values need positive mean and variance".into(),
        ));
    }
    let dof = 2.0 * mean * mean / var;
    Ok(var / (2.0 * mean) * chi2_upper_quantile(dof, alpha)?)
}

/// Warning and alarm lines of a pair of charts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartLimits {
    pub t2_warning: f64,
    pub t2_alarm: f64,
    /// F-based 99% limit expressed on the chart's T² scale.
    pub t2_flim: f64,
    pub spex_warning: f64,
    pub spex_limit: f64,
    pub method: LimitMethod,
    pub t2_method: String,
    pub spex_method: String,
}

/// Limits from calibration statistics of an `h`-component model fitted on
/// `n` samples. The chart T² carries a `1/(n-1)` factor, so the F limit is
/// divided by `(n-1)²` to land on the same scale.
pub fn compute_limits(t2_cal: &[f64], spex_cal: &[f64], n: usize, h: usize, method: LimitMethod) -> Result<ChartLimits> {
    let scale = ((n - 1) * (n - 1)) as f64;
    let t2_flim = limits_f(n, h, ALARM_ALPHA)? / scale;
    let (t2_warning, t2_alarm, t2_method) = match method {
        LimitMethod::GaussianChi2 | LimitMethod::Gaussian => {
            let (w, a) = limits_gaussian(t2_cal)?;
            (w, a, "gaussian_moments")
        }
        LimitMethod::FChi2 => (limits_f(n, h, WARNING_ALPHA)? / scale, t2_flim, "f_distribution"),
    };
    let (spex_warning, spex_limit, spex_method) = match method {
        LimitMethod::Gaussian => {
            let (w, a) = limits_gaussian(spex_cal)?;
            (w, a, "gaussian_moments")
        }
        _ => (
            limits_chi2(spex_cal, WARNING_ALPHA)?,
            limits_chi2(spex_cal, ALARM_ALPHA)?,
            "scaled_chi2",
        ),
    };
    Ok(ChartLimits {
        t2_warning,
        t2_alarm,
        t2_flim,
        spex_warning,
        spex_limit,
        method,
        t2_method: t2_method.into(),
        spex_method: spex_method.into(),
    })
}
