use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kpcr::{kpcr_from_kernel, stack, KpcrLoss};
use super::{LossTrace, OptimMethod, OptimResult, ParamSpace, Parameterization};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{KernelConfig, PairwiseTerms};

const MAX_RESAMPLES: usize = 5;

/// Settings of the stochastic finite-difference optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KfConfig {
    /// Retained kernel principal components.
    pub h: usize,
    /// Iterations.
    pub iterations: usize,
    /// Sub-batches per iteration.
    pub sub_iterations: usize,
    /// Samples drawn per class and sub-batch.
    pub ns: usize,
    /// Learning rate in log-parameter space.
    pub alpha: f64,
    /// Central-difference step in log-parameter space.
    pub fd_step: f64,
    pub seed: u64,
    pub parameterization: Parameterization,
    /// Temperature of the logistic relaxation; `None` trains on the raw loss.
    pub surrogate_tau: Option<f64>,
}

impl Default for KfConfig {
    fn default() -> Self {
        KfConfig {
            h: 4,
            iterations: 300,
            sub_iterations: 8,
            ns: 40,
            alpha: 0.5,
            fd_step: 1e-2,
            seed: 0,
            parameterization: Parameterization::LogSigma,
            surrogate_tau: None,
        }
    }
}

impl KfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.iterations == 0 || self.sub_iterations == 0 || self.ns == 0 {
            return Err(Error::Invalid("h, iterations, sub_iterations and ns must be positive".into()));
        }
        if self.ns < self.h + 1 {
            return Err(Error::Invalid(format!(
                "ns = {} cannot support {} components (needs ns >= h + 1)",
                self.ns, self.h
            )));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Invalid(format!("learning rate must be non-negative, got {}", self.alpha)));
        }
        if !(self.fd_step > 0.0) || !self.fd_step.is_finite() {
            return Err(Error::Invalid(format!("fd_step must be positive, got {}", self.fd_step)));
        }
        if let Some(t) = self.surrogate_tau {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::Invalid(format!("surrogate temperature must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

/// Row indices of one sub-batch: which faulty set and which rows.
#[derive(Debug, Clone)]
struct Draw {
    faulty_set: usize,
    normal_rows: Vec<usize>,
    faulty_rows: Vec<usize>,
}

struct Problem<'a> {
    normal: &'a Dataset,
    faulty: &'a [&'a Dataset],
    ns: usize,
}

impl Problem<'_> {
    fn draw<R: Rng>(&self, rng: &mut R) -> Draw {
        let faulty_set = if self.faulty.len() == 1 {
            0
        } else {
            rng.random_range(0..self.faulty.len())
        };
        let normal_rows = sample_indices(rng, self.normal.n(), self.ns).into_vec();
        let faulty_rows = sample_indices(rng, self.faulty[faulty_set].n(), self.ns).into_vec();
        Draw {
            faulty_set,
            normal_rows,
            faulty_rows,
        }
    }

    fn terms(&self, draw: &Draw, space: &ParamSpace) -> Result<PairwiseTerms> {
        let xn = self.normal.select_rows(&draw.normal_rows);
        let xf = self.faulty[draw.faulty_set].select_rows(&draw.faulty_rows);
        let x = stack(&xf, &xn)?;
        Ok(PairwiseTerms::new(&x, &x, space.template().mode))
    }
}

/// A prepared sub-batch: its pairwise terms and the kernel at the current θ.
struct Batch {
    terms: PairwiseTerms,
    k_base: DMatrix<f64>,
    base: KpcrLoss,
    degenerate: bool,
}

fn mix(seed: u64, parts: &[u64]) -> u64 {
    // splitmix64 over the concatenated parts
    let mut z = seed;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Learns kernel parameters by descending a finite-difference gradient of
/// the mean K-PCR loss over random normal/faulty sub-batches.
///
/// Every perturbed evaluation of an iteration reuses that iteration's draws.
/// The trace holds the parameters and mean raw loss at the start of each
/// iteration; no update follows the last one, so `theta_opt` is the last
/// traced parameter vector and `final_loss` its loss.
pub fn kf_optimize(normal: &Dataset, faulty: &[&Dataset], cfg0: &KernelConfig, kf: &KfConfig) -> Result<OptimResult> {
    kf.validate()?;
    if faulty.is_empty() {
        return Err(Error::Invalid("at least one faulty calibration set is required".into()));
    }
    let d = normal.d();
    for f in faulty {
        if f.d() != d {
            return Err(Error::Dimension(format!("faulty set has {} variables, normal set {d}", f.d())));
        }
        if f.scaler != normal.scaler {
            return Err(Error::Invalid("faulty and normal data must share the normal scaler".into()));
        }
    }
    for (name, n) in std::iter::once(("normal", normal.n())).chain(faulty.iter().map(|f| ("faulty", f.n()))) {
        if n < kf.ns {
            return Err(Error::Invalid(format!("{name} set has {n} samples, fewer than ns = {}", kf.ns)));
        }
    }
    cfg0.validate(d)?;
    let space = ParamSpace::new(cfg0, kf.parameterization);
    let problem = Problem {
        normal,
        faulty,
        ns: kf.ns,
    };
    let tau = kf.surrogate_tau;

    let mut log_theta: Vec<f64> = space.initial().iter().map(|t| t.ln()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(kf.seed);
    let mut trace = LossTrace::default();
    let mut objective_trace = Vec::new();
    let mut evaluations = 0usize;
    let mut degenerate_batches = 0usize;

    for iter in 0..kf.iterations {
        let started = Instant::now();
        let theta: Vec<f64> = log_theta.iter().map(|l| l.exp()).collect();
        space.check(&theta)?;
        let cfg = space.config(&theta);

        let draws: Vec<Draw> = (0..kf.sub_iterations).map(|_| problem.draw(&mut rng)).collect();
        let mut batches = Vec::with_capacity(draws.len());
        for (s, first) in draws.into_iter().enumerate() {
            let mut draw = first;
            let mut attempt = 0;
            loop {
                let terms = problem.terms(&draw, &space)?;
                let k_base = terms.assemble(&cfg);
                evaluations += 1;
                match kpcr_from_kernel(k_base.clone(), kf.ns, kf.h, tau) {
                    Ok(base) => {
                        batches.push(Batch {
                            terms,
                            k_base,
                            base,
                            degenerate: false,
                        });
                        break;
                    }
                    Err(Error::RankDeficient { rank, .. }) => {
                        degenerate_batches += 1;
                        attempt += 1;
                        if attempt > MAX_RESAMPLES {
                            log::warn!(
                                "iteration {}: sub-batch {} stayed rank deficient (rank {rank}); loss set to 0.5",
                                iter + 1,
                                s + 1
                            );
                            batches.push(Batch {
                                terms,
                                k_base,
                                base: KpcrLoss::degenerate(tau),
                                degenerate: true,
                            });
                            break;
                        }
                        let mut r = ChaCha8Rng::seed_from_u64(mix(kf.seed, &[iter as u64, s as u64, attempt as u64]));
                        draw = problem.draw(&mut r);
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        let s_count = batches.len() as f64;
        let raw_mean = batches.iter().map(|b| b.base.raw).sum::<f64>() / s_count;
        let obj_mean = batches.iter().map(|b| b.base.objective()).sum::<f64>() / s_count;
        if !raw_mean.is_finite() || !obj_mean.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at iteration {}", iter + 1)));
        }

        if iter + 1 < kf.iterations && kf.alpha > 0.0 {
            let mut grad = vec![0.0; space.len()];
            for (p, g) in grad.iter_mut().enumerate() {
                let c = space.component(p);
                let family = cfg.family_of(c);
                let (sig0, gam0) = (cfg.sigma[c], cfg.gamma2[c]);
                let mut side = [0.0; 2];
                for (j, sign) in [1.0, -1.0].into_iter().enumerate() {
                    let mut lt = log_theta.clone();
                    lt[p] += sign * kf.fd_step;
                    let pert = space.config(&lt.iter().map(|l| l.exp()).collect::<Vec<_>>());
                    let (sig1, gam1) = (pert.sigma[c], pert.gamma2[c]);
                    let mut total = 0.0;
                    for b in &batches {
                        if b.degenerate {
                            total += 0.5;
                            continue;
                        }
                        let mut k = b.k_base.clone();
                        b.terms.accumulate(&mut k, c, family, sig0, gam0, -1.0);
                        b.terms.accumulate(&mut k, c, family, sig1, gam1, 1.0);
                        evaluations += 1;
                        total += match kpcr_from_kernel(k, kf.ns, kf.h, tau) {
                            Ok(l) => l.objective(),
                            Err(Error::RankDeficient { .. }) => 0.5,
                            Err(e) => return Err(e),
                        };
                    }
                    side[j] = total / s_count;
                }
                *g = (side[0] - side[1]) / (2.0 * kf.fd_step);
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("non-finite gradient at iteration {}", iter + 1)));
            }
            for (l, g) in log_theta.iter_mut().zip(&grad) {
                *l -= kf.alpha * g;
            }
        }

        let wall = started.elapsed().as_secs_f64() * 1e3;
        trace.push(raw_mean, &theta, wall);
        objective_trace.push(obj_mean);
        log::debug!("iteration {}: loss {raw_mean:.4} objective {obj_mean:.4}", iter + 1);
    }

    if tau.is_some() {
        trace.objective = Some(objective_trace);
    }
    let theta_opt = trace.theta.last().cloned().expect("at least one iteration");
    let final_loss = *trace.mean_loss.last().expect("at least one iteration");
    let mut result = OptimResult::new(OptimMethod::KernelFlows, theta_opt.clone(), final_loss, trace, evaluations);
    result.degenerate_batches = degenerate_batches;
    result.param_names = Some(space.names());
    result.kernel = Some(space.config(&theta_opt));
    result.config = serde_json::to_value(kf)?;
    Ok(result)
}
