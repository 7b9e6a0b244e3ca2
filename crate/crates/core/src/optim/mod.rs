//! Kernel-parameter learning: the stochastic finite-difference optimizer
//! over a K-PCR discrimination loss, plus line-search, Nelder–Mead and
//! genetic-algorithm baselines.

mod baselines;
mod kf;
mod kpcr;

use std::fmt::Write;

use serde::{Deserialize, Serialize};

pub use baselines::{ga_optimize, line_search, nelder_mead, GaOptions, NmOptions, PartitionLoss};
pub use kf::{kf_optimize, KfConfig};
pub use kpcr::{kpcr_from_kernel, kpcr_loss, kpcr_subloss, KpcrLoss};

use crate::error::{Error, Result};
use crate::kernel::{KernelConfig, KernelMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// One log-sigma per kernel component; gamma2 stays fixed.
    #[default]
    LogSigma,
    /// Log-sigma and log-gamma2 per kernel component.
    LogSigmaLogGamma2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimMethod {
    KernelFlows,
    LineSearch,
    NelderMead,
    #[serde(alias = "ga")]
    GeneticAlgorithm,
}

/// Maps a positive parameter vector onto a kernel configuration.
///
/// Layout: `sigma` entries first (one per kernel component), then, with
/// [`Parameterization::LogSigmaLogGamma2`], the matching `gamma2` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpace {
    template: KernelConfig,
    parameterization: Parameterization,
}

impl ParamSpace {
    pub fn new(template: &KernelConfig, parameterization: Parameterization) -> Self {
        ParamSpace {
            template: template.clone(),
            parameterization,
        }
    }

    pub fn components(&self) -> usize {
        self.template.sigma.len()
    }

    pub fn len(&self) -> usize {
        match self.parameterization {
            Parameterization::LogSigma => self.components(),
            Parameterization::LogSigmaLogGamma2 => 2 * self.components(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parameterization(&self) -> Parameterization {
        self.parameterization
    }

    pub fn template(&self) -> &KernelConfig {
        &self.template
    }

    /// Kernel component touched by parameter `p`.
    pub fn component(&self, p: usize) -> usize {
        p % self.components()
    }

    pub fn initial(&self) -> Vec<f64> {
        let mut theta = self.template.sigma.clone();
        if self.parameterization == Parameterization::LogSigmaLogGamma2 {
            theta.extend_from_slice(&self.template.gamma2);
        }
        theta
    }

    pub fn config(&self, theta: &[f64]) -> KernelConfig {
        let c = self.components();
        let mut cfg = self.template.clone();
        cfg.sigma.copy_from_slice(&theta[..c]);
        if self.parameterization == Parameterization::LogSigmaLogGamma2 {
            cfg.gamma2.copy_from_slice(&theta[c..2 * c]);
        }
        cfg
    }

    pub fn names(&self) -> Vec<String> {
        let c = self.components();
        let label = |base: &str, i: usize| match self.template.mode {
            KernelMode::Shared => base.to_string(),
            KernelMode::PerVariable => format!("{base}_{}", i + 1),
        };
        let mut names: Vec<String> = (0..c).map(|i| label("sigma", i)).collect();
        if self.parameterization == Parameterization::LogSigmaLogGamma2 {
            names.extend((0..c).map(|i| label("gamma2", i)));
        }
        names
    }

    pub(crate) fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.len() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, kernel expects {}",
                theta.len(),
                self.len()
            )));
        }
        if let Some(bad) = theta.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
            return Err(Error::Numerical(format!("kernel parameter left the positive range: {bad}")));
        }
        Ok(())
    }
}

/// Per-iteration record of an optimizer run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTrace {
    /// Loss per iteration: the mean raw sub-loss for the stochastic
    /// optimizer, the best loss so far for the baselines, the loss at each
    /// grid point for line search.
    pub mean_loss: Vec<f64>,
    /// Smoothed objective per iteration when training on the surrogate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub wall_ms: Vec<f64>,
}

impl LossTrace {
    pub fn len(&self) -> usize {
        self.mean_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_loss.is_empty()
    }

    pub(crate) fn push(&mut self, loss: f64, theta: &[f64], wall_ms: f64) {
        self.mean_loss.push(loss);
        self.theta.push(theta.to_vec());
        self.wall_ms.push(wall_ms);
    }

    /// Running minimum of `mean_loss`.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.mean_loss
            .iter()
            .map(|&l| {
                best = best.min(l);
                best
            })
            .collect()
    }

    pub fn clear_wall_time(&mut self) {
        self.wall_ms.iter_mut().for_each(|w| *w = 0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub method: OptimMethod,
    pub theta_opt: Vec<f64>,
    pub final_loss: f64,
    pub trace: LossTrace,
    pub evaluations: usize,
    /// False when a baseline stopped on its evaluation budget.
    pub converged: bool,
    /// Sub-batches replaced because the kernel matrix lacked rank.
    #[serde(default)]
    pub degenerate_batches: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelConfig>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

impl OptimResult {
    pub(crate) fn new(method: OptimMethod, theta_opt: Vec<f64>, final_loss: f64, trace: LossTrace, evaluations: usize) -> Self {
        OptimResult {
            method,
            theta_opt,
            final_loss,
            trace,
            evaluations,
            converged: true,
            degenerate_batches: 0,
            param_names: None,
            kernel: None,
            config: serde_json::Value::Null,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `iteration,mean_loss,wall_ms,<one column per parameter>`, iterations 1-based.
pub fn trace_csv(result: &OptimResult) -> String {
    let p = result.theta_opt.len();
    let names = result
        .param_names
        .clone()
        .unwrap_or_else(|| (1..=p).map(|i| format!("theta_{i}")).collect());
    let mut out = String::from("iteration,mean_loss,wall_ms");
    for n in &names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    let t = &result.trace;
    for i in 0..t.len() {
        let _ = write!(out, "{},{},{}", i + 1, t.mean_loss[i], t.wall_ms[i]);
        for v in &t.theta[i] {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;

    #[test]
    fn param_space_layouts() {
        let cfg = KernelConfig::per_variable(KernelFamily::Cauchy, 3, 2.0, 1.5);
        let s = ParamSpace::new(&cfg, Parameterization::LogSigmaLogGamma2);
        assert_eq!(s.len(), 6);
        assert_eq!(s.initial(), vec![2.0, 2.0, 2.0, 1.5, 1.5, 1.5]);
        assert_eq!(s.component(4), 1);
        let c = s.config(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(c.sigma, vec![1.0, 2.0, 3.0]);
        assert_eq!(c.gamma2, vec![4.0, 5.0, 6.0]);
        assert_eq!(s.names()[4], "gamma2_2");
        let shared = ParamSpace::new(&KernelConfig::shared(KernelFamily::Gaussian, 1.0, 1.0), Parameterization::LogSigma);
        assert_eq!(shared.names(), vec!["sigma"]);
        assert!(shared.check(&[0.0]).is_err());
        assert!(shared.check(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let mut trace = LossTrace::default();
        trace.push(0.5, &[1.0, 2.0], 3.0);
        trace.push(0.25, &[1.5, 2.5], 4.0);
        let mut r = OptimResult::new(OptimMethod::KernelFlows, vec![1.5, 2.5], 0.25, trace, 6);
        r.param_names = Some(vec!["sigma_1".into(), "sigma_2".into()]);
        assert_eq!(
            trace_csv(&r),
            "iteration,mean_loss,wall_ms,sigma_1,sigma_2\n1,0.5,3,1,2\n2,0.25,4,1.5,2.5\n"
        );
        assert_eq!(r.trace.best_so_far(), vec![0.5, 0.25]);
        let back: OptimResult = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
