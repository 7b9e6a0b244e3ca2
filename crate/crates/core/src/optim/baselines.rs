use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kpcr::{kpcr_from_kernel, stack};
use super::{LossTrace, OptimMethod, OptimResult, ParamSpace};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{KernelConfig, PairwiseTerms};

/// Deterministic K-PCR loss over complete normal and faulty partitions,
/// shared by the baseline optimizers.
pub struct PartitionLoss {
    space: ParamSpace,
    terms: PairwiseTerms,
    n_faulty: usize,
    h: usize,
    tau: Option<f64>,
}

impl PartitionLoss {
    pub fn new(normal: &Dataset, faulty: &[&Dataset], space: ParamSpace, h: usize, tau: Option<f64>) -> Result<Self> {
        if faulty.is_empty() {
            return Err(Error::Invalid("at least one faulty calibration set is required".into()));
        }
        let parts: Vec<&Dataset> = faulty.to_vec();
        let xf = Dataset::concat(&parts, crate::dataset::Role::FaultyCalibration)?;
        if xf.scaler != normal.scaler {
            return Err(Error::Invalid("faulty and normal data must share the normal scaler".into()));
        }
        space.template().validate(normal.d())?;
        let x = stack(&xf.x, &normal.x)?;
        Ok(PartitionLoss {
            terms: PairwiseTerms::new(&x, &x, space.template().mode),
            n_faulty: xf.n(),
            space,
            h,
            tau,
        })
    }

    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    pub fn config(&self, theta: &[f64]) -> KernelConfig {
        self.space.config(theta)
    }

    /// Loss at `theta`; 0.5 when the kernel matrix lacks rank `h`.
    pub fn eval(&self, theta: &[f64]) -> Result<f64> {
        self.space.check(theta)?;
        let k = self.terms.assemble(&self.space.config(theta));
        match kpcr_from_kernel(k, self.n_faulty, self.h, self.tau) {
            Ok(l) => Ok(l.objective()),
            Err(Error::RankDeficient { .. }) => Ok(0.5),
            Err(e) => Err(e),
        }
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Evaluates every grid point; the first minimizer wins ties.
pub fn line_search(mut loss: impl FnMut(f64) -> Result<f64>, grid: &[f64]) -> Result<OptimResult> {
    if grid.is_empty() {
        return Err(Error::Invalid("line search grid is empty".into()));
    }
    let mut trace = LossTrace::default();
    let mut best = (f64::INFINITY, grid[0]);
    for &g in grid {
        let t = Instant::now();
        let l = loss(g)?;
        if !l.is_finite() {
            return Err(Error::Numerical(format!("loss at {g} is not finite")));
        }
        if l < best.0 {
            best = (l, g);
        }
        trace.push(l, &[g], ms_since(t));
    }
    Ok(OptimResult::new(OptimMethod::LineSearch, vec![best.1], best.0, trace, grid.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmOptions {
    pub max_evals: usize,
    /// Stop once every vertex lies within this distance of the best one.
    pub tol: f64,
    /// Edge length of the initial simplex, in search coordinates.
    pub initial_step: f64,
    /// Search over `ln(theta)` instead of `theta`.
    pub log_space: bool,
}

impl Default for NmOptions {
    fn default() -> Self {
        NmOptions {
            max_evals: 500,
            tol: 1e-6,
            initial_step: 0.5,
            log_space: true,
        }
    }
}

/// Nelder–Mead simplex search (reflection 1, expansion 2, contraction 0.5,
/// shrink 0.5). Returns the best vertex; `converged` is false when the
/// evaluation budget ran out first.
pub fn nelder_mead(mut loss: impl FnMut(&[f64]) -> Result<f64>, theta0: &[f64], opts: &NmOptions) -> Result<OptimResult> {
    let n = theta0.len();
    if n == 0 {
        return Err(Error::Invalid("Nelder–Mead needs at least one parameter".into()));
    }
    if opts.log_space && theta0.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Invalid("log-space search needs a positive starting point".into()));
    }
    let to_theta = |x: &[f64]| -> Vec<f64> {
        if opts.log_space {
            x.iter().map(|v| v.exp()).collect()
        } else {
            x.to_vec()
        }
    };
    let mut evals = 0usize;
    let mut f = |x: &[f64], evals: &mut usize| -> Result<f64> {
        *evals += 1;
        let v = loss(&to_theta(x))?;
        if v.is_nan() {
            return Err(Error::Numerical("loss returned NaN".into()));
        }
        Ok(v)
    };

    let x0: Vec<f64> = if opts.log_space {
        theta0.iter().map(|t| t.ln()).collect()
    } else {
        theta0.to_vec()
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = f(&x0, &mut evals)?;
    simplex.push((x0.clone(), f0));
    for i in 0..n {
        let mut x = x0.clone();
        x[i] += opts.initial_step;
        let fx = f(&x, &mut evals)?;
        simplex.push((x, fx));
    }

    let mut trace = LossTrace::default();
    let mut converged = false;
    let started = Instant::now();
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        trace.push(simplex[0].1, &to_theta(&simplex[0].0), ms_since(started));
        let best = simplex[0].0.clone();
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&best).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if diameter < opts.tol {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (worst.0[j] - centroid[j])).collect() };

        let xr = along(-1.0);
        let fr = f(&xr, &mut evals)?;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe, &mut evals)?;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = along(-0.5);
            let fc = f(&xc, &mut evals)?;
            (xc, if fc <= fr { fc } else { f64::INFINITY })
        } else {
            let xc = along(0.5);
            let fc = f(&xc, &mut evals)?;
            (xc, if fc < worst.1 { fc } else { f64::INFINITY })
        };
        if fc.is_finite() {
            simplex[n] = (xc, fc);
            continue;
        }
        for vertex in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = (0..n).map(|j| best[j] + 0.5 * (vertex.0[j] - best[j])).collect();
            let fx = f(&x, &mut evals)?;
            *vertex = (x, fx);
        }
    }
    let (x_best, f_best) = simplex.swap_remove(0);
    let mut r = OptimResult::new(OptimMethod::NelderMead, to_theta(&x_best), f_best, trace, evals);
    r.converged = converged;
    if !converged {
        log::warn!("Nelder–Mead stopped on its budget of {} evaluations", opts.max_evals);
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaOptions {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    /// BLX-alpha blend width.
    pub blend_alpha: f64,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    /// Mutation standard deviation relative to the bound width.
    pub mutation_scale: f64,
    pub elitism: usize,
    pub seed: u64,
    /// Search over `ln(theta)` within log-transformed bounds.
    pub log_space: bool,
    /// Starting individuals; drawn uniformly within bounds when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_population: Option<Vec<Vec<f64>>>,
}

impl Default for GaOptions {
    fn default() -> Self {
        GaOptions {
            population: 40,
            generations: 50,
            tournament: 3,
            blend_alpha: 0.5,
            crossover_rate: 0.9,
            mutation_rate: 0.1,
            mutation_scale: 0.1,
            elitism: 2,
            seed: 0,
            log_space: true,
            initial_population: None,
        }
    }
}

/// Real-coded genetic algorithm with tournament selection, blend crossover,
/// Gaussian mutation and elitism. Deterministic given `opts.seed`.
pub fn ga_optimize(mut loss: impl FnMut(&[f64]) -> Result<f64>, bounds: &[(f64, f64)], opts: &GaOptions) -> Result<OptimResult> {
    let p = bounds.len();
    if p == 0 {
        return Err(Error::Invalid("genetic algorithm needs at least one parameter".into()));
    }
    if bounds.iter().any(|&(lo, hi)| !(lo > 0.0) || !(hi > lo) || !hi.is_finite()) {
        return Err(Error::Invalid("GA bounds must be finite positive intervals".into()));
    }
    if opts.population < 2 || opts.tournament == 0 || opts.elitism >= opts.population {
        return Err(Error::Invalid("GA needs population >= 2, tournament >= 1 and elitism < population".into()));
    }
    let tf = |v: f64| if opts.log_space { v.ln() } else { v };
    let inv = |v: f64| if opts.log_space { v.exp() } else { v };
    let lo: Vec<f64> = bounds.iter().map(|b| tf(b.0)).collect();
    let hi: Vec<f64> = bounds.iter().map(|b| tf(b.1)).collect();
    let clamp = |g: &mut Vec<f64>| g.iter_mut().enumerate().for_each(|(j, v)| *v = v.clamp(lo[j], hi[j]));
    let to_theta = |g: &[f64]| -> Vec<f64> { g.iter().map(|&v| inv(v)).collect() };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pop: Vec<Vec<f64>> = match &opts.initial_population {
        Some(init) => {
            if init.len() != opts.population || init.iter().any(|g| g.len() != p) {
                return Err(Error::Dimension("initial population does not match population size and bounds".into()));
            }
            init.iter()
                .map(|g| {
                    let mut g: Vec<f64> = g.iter().map(|&v| tf(v)).collect();
                    clamp(&mut g);
                    g
                })
                .collect()
        }
        None => (0..opts.population)
            .map(|_| (0..p).map(|j| rng.random_range(lo[j]..=hi[j])).collect())
            .collect(),
    };

    let mut evals = 0usize;
    let mut eval = |g: &[f64], evals: &mut usize| -> Result<f64> {
        *evals += 1;
        let v = loss(&to_theta(g))?;
        if v.is_nan() {
            return Err(Error::Numerical("loss returned NaN".into()));
        }
        Ok(v)
    };
    let mut fit: Vec<f64> = Vec::with_capacity(pop.len());
    for g in &pop {
        fit.push(eval(g, &mut evals)?);
    }
    let mut trace = LossTrace::default();
    let mut best: (Vec<f64>, f64) = (pop[0].clone(), f64::INFINITY);
    let started = Instant::now();

    for gen in 0..=opts.generations {
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]));
        if fit[order[0]] < best.1 {
            best = (pop[order[0]].clone(), fit[order[0]]);
        }
        trace.push(best.1, &to_theta(&best.0), ms_since(started));
        if gen == opts.generations {
            break;
        }

        let tournament = |rng: &mut ChaCha8Rng| -> usize {
            let mut winner = rng.random_range(0..pop.len());
            for _ in 1..opts.tournament {
                let c = rng.random_range(0..pop.len());
                if fit[c] < fit[winner] {
                    winner = c;
                }
            }
            winner
        };
        let mut next: Vec<Vec<f64>> = order[..opts.elitism].iter().map(|&i| pop[i].clone()).collect();
        let mut next_fit: Vec<Option<f64>> = order[..opts.elitism].iter().map(|&i| Some(fit[i])).collect();
        while next.len() < opts.population {
            let (a, b) = (tournament(&mut rng), tournament(&mut rng));
            let (mut c1, mut c2) = (pop[a].clone(), pop[b].clone());
            if rng.random::<f64>() < opts.crossover_rate {
                for j in 0..p {
                    let (x, y) = (pop[a][j], pop[b][j]);
                    let (mn, mx) = (x.min(y), x.max(y));
                    let ext = opts.blend_alpha * (mx - mn);
                    if mx - mn > 0.0 {
                        c1[j] = rng.random_range(mn - ext..=mx + ext);
                        c2[j] = rng.random_range(mn - ext..=mx + ext);
                    }
                }
            }
            for child in [&mut c1, &mut c2] {
                for j in 0..p {
                    if rng.random::<f64>() < opts.mutation_rate {
                        let sd = opts.mutation_scale * (hi[j] - lo[j]);
                        if sd > 0.0 {
                            child[j] += Normal::new(0.0, sd).expect("positive sd").sample(&mut rng);
                        }
                    }
                }
                clamp(child);
            }
            next.push(c1);
            next_fit.push(None);
            if next.len() < opts.population {
                next.push(c2);
                next_fit.push(None);
            }
        }
        pop = next;
        fit = Vec::with_capacity(pop.len());
        for (g, f) in pop.iter().zip(next_fit) {
            fit.push(match f {
                Some(v) => v,
                None => eval(g, &mut evals)?,
            });
        }
    }
    Ok(OptimResult::new(
        OptimMethod::GeneticAlgorithm,
        to_theta(&best.0),
        best.1,
        trace,
        evals,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_search_grid_hit_and_ties() {
        let r = line_search(|s| Ok((s - 3.0) * (s - 3.0)), &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(r.theta_opt, vec![3.0]);
        assert_eq!(r.final_loss, 0.0);
        assert_eq!(r.trace.len(), 5);
        let flat = line_search(|_| Ok(0.5), &[0.1, 1.0, 10.0]).unwrap();
        assert_eq!(flat.theta_opt, vec![0.1]);
        assert!(line_search(|_| Ok(0.0), &[]).is_err());
    }

    #[test]
    fn nm_quadratic_bowl() {
        let opts = NmOptions {
            log_space: false,
            ..Default::default()
        };
        let r = nelder_mead(|x| Ok((x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2)), &[4.0, 4.0], &opts).unwrap();
        assert!(r.converged);
        assert!((r.theta_opt[0] - 1.0).abs() < 1e-4 && (r.theta_opt[1] + 2.0).abs() < 1e-4);
        let best = r.trace.best_so_far();
        assert_eq!(best, r.trace.mean_loss);
    }

    #[test]
    fn nm_starting_at_optimum_stays() {
        let opts = NmOptions {
            log_space: false,
            ..Default::default()
        };
        let r = nelder_mead(|x| Ok(x[0] * x[0] + x[1] * x[1]), &[0.0, 0.0], &opts).unwrap();
        assert_eq!(r.theta_opt, vec![0.0, 0.0]);
        assert_eq!(r.final_loss, 0.0);
    }

    #[test]
    fn nm_budget_flag() {
        let opts = NmOptions {
            log_space: false,
            max_evals: 10,
            ..Default::default()
        };
        let r = nelder_mead(|x| Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)), &[-1.2, 1.0], &opts).unwrap();
        assert!(!r.converged);
    }

    #[test]
    fn ga_identical_population_without_mutation_stagnates() {
        let opts = GaOptions {
            population: 6,
            generations: 5,
            mutation_rate: 0.0,
            log_space: false,
            initial_population: Some(vec![vec![2.0, 2.0]; 6]),
            ..Default::default()
        };
        let r = ga_optimize(|x| Ok(x.iter().map(|v| (v - 1.5).powi(2)).sum()), &[(1.0, 3.0), (1.0, 3.0)], &opts).unwrap();
        assert!(r.trace.mean_loss.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(r.theta_opt, vec![2.0, 2.0]);
    }

    #[test]
    fn ga_is_deterministic_and_rejects_bad_bounds() {
        let opts = GaOptions {
            generations: 5,
            seed: 9,
            ..Default::default()
        };
        let f = |x: &[f64]| Ok(x.iter().map(|v| (v.ln() - 0.3).powi(2)).sum::<f64>());
        let a = ga_optimize(f, &[(0.1, 10.0)], &opts).unwrap();
        let b = ga_optimize(f, &[(0.1, 10.0)], &opts).unwrap();
        assert_eq!(a.theta_opt, b.theta_opt);
        assert!(ga_optimize(f, &[(-1.0, 10.0)], &opts).is_err());
        assert!(ga_optimize(f, &[(2.0, 1.0)], &opts).is_err());
    }
}
