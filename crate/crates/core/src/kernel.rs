//! Stationary kernels (Gaussian, Cauchy, half-integer Matérn), additive
//! per-variable composition and kernel-matrix centering.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smoothness of a Matérn kernel. Only the closed-form half-integer cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaternNu {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternNu {
    pub fn from_f64(nu: f64) -> Result<Self> {
        match nu {
            0.5 => Ok(MaternNu::Half),
            1.5 => Ok(MaternNu::ThreeHalves),
            2.5 => Ok(MaternNu::FiveHalves),
            v => Err(Error::Invalid(format!(
                "unsupported Matérn nu {v}; expected 0.5, 1.5 or 2.5"
            ))),
        }
    }

    pub fn value(self) -> f64 {
        match self {
            MaternNu::Half => 0.5,
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    Gaussian,
    Cauchy,
    Matern(MaternNu),
    /// `gamma2 * <x, y>`; ignores sigma. Reduces kernel PCA to ordinary PCA.
    Linear,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Cauchy => "cauchy",
            KernelFamily::Matern(_) => "matern",
            KernelFamily::Linear => "linear",
        }
    }

    pub fn is_stationary(self) -> bool {
        !matches!(self, KernelFamily::Linear)
    }

    /// Kernel value as a function of the squared distance. Not valid for `Linear`.
    #[inline]
    pub fn eval_sq(self, r2: f64, sigma: f64, gamma2: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => gamma2 * (-r2 / (2.0 * sigma * sigma)).exp(),
            KernelFamily::Cauchy => gamma2 / (1.0 + r2 / (sigma * sigma)),
            KernelFamily::Matern(nu) => matern(r2.sqrt() / sigma, gamma2, nu),
            KernelFamily::Linear => f64::NAN,
        }
    }
}

#[inline]
fn matern(s: f64, gamma2: f64, nu: MaternNu) -> f64 {
    match nu {
        MaternNu::Half => gamma2 * (-s).exp(),
        MaternNu::ThreeHalves => {
            let a = 3f64.sqrt() * s;
            gamma2 * (1.0 + a) * (-a).exp()
        }
        MaternNu::FiveHalves => {
            let a = 5f64.sqrt() * s;
            gamma2 * (1.0 + a + a * a / 3.0) * (-a).exp()
        }
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn k_gaussian(x: &[f64], y: &[f64], sigma: f64, gamma2: f64) -> f64 {
    KernelFamily::Gaussian.eval_sq(sq_dist(x, y), sigma, gamma2)
}

pub fn k_cauchy(x: &[f64], y: &[f64], sigma: f64, gamma2: f64) -> f64 {
    KernelFamily::Cauchy.eval_sq(sq_dist(x, y), sigma, gamma2)
}

pub fn k_matern(x: &[f64], y: &[f64], sigma: f64, gamma2: f64, nu: f64) -> Result<f64> {
    let nu = MaternNu::from_f64(nu)?;
    Ok(matern(sq_dist(x, y).sqrt() / sigma, gamma2, nu))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    /// One kernel over the full sample vectors.
    Shared,
    /// Sum of one-dimensional kernels, one per variable, each with its own parameters.
    PerVariable,
}

/// Kernel family choice plus its parameters.
///
/// In `Shared` mode `family`, `sigma` and `gamma2` hold one entry each. In
/// `PerVariable` mode `sigma` and `gamma2` hold one entry per variable and
/// `family` holds either one entry (used for every variable) or one per
/// variable, which gives a kernel combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelConfigDoc", into = "KernelConfigDoc")]
pub struct KernelConfig {
    pub family: Vec<KernelFamily>,
    pub mode: KernelMode,
    pub sigma: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub optimize_gamma2: bool,
}

impl KernelConfig {
    pub fn shared(family: KernelFamily, sigma: f64, gamma2: f64) -> Self {
        KernelConfig {
            family: vec![family],
            mode: KernelMode::Shared,
            sigma: vec![sigma],
            gamma2: vec![gamma2],
            optimize_gamma2: false,
        }
    }

    pub fn per_variable(family: KernelFamily, d: usize, sigma: f64, gamma2: f64) -> Self {
        KernelConfig {
            family: vec![family],
            mode: KernelMode::PerVariable,
            sigma: vec![sigma; d],
            gamma2: vec![gamma2; d],
            optimize_gamma2: false,
        }
    }

    pub fn linear() -> Self {
        Self::shared(KernelFamily::Linear, 1.0, 1.0)
    }

    pub fn family_of(&self, v: usize) -> KernelFamily {
        if self.family.len() == 1 {
            self.family[0]
        } else {
            self.family[v]
        }
    }

    /// Checks parameter positivity and, for per-variable kernels, that every
    /// vector matches the data dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        if let Some(bad) = self
            .sigma
            .iter()
            .chain(&self.gamma2)
            .find(|v| !(**v > 0.0) || !v.is_finite())
        {
            return Err(Error::Invalid(format!("kernel parameters must be positive, got {bad}")));
        }
        if self.family.is_empty() {
            return Err(Error::Invalid("kernel family list is empty".into()));
        }
        match self.mode {
            KernelMode::Shared => {
                if self.sigma.len() != 1 || self.gamma2.len() != 1 || self.family.len() != 1 {
                    return Err(Error::Invalid(
                        "shared kernels take exactly one family, sigma and gamma2".into(),
                    ));
                }
            }
            KernelMode::PerVariable => {
                if self.sigma.len() != d || self.gamma2.len() != d {
                    return Err(Error::Dimension(format!(
                        "per-variable kernel has {} sigma / {} gamma2 entries for {d} variables",
                        self.sigma.len(),
                        self.gamma2.len()
                    )));
                }
                if self.family.len() != 1 && self.family.len() != d {
                    return Err(Error::Dimension(format!(
                        "{} kernel families given for {d} variables",
                        self.family.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// `k(x, x)`: gamma2 for shared stationary kernels, the gamma2 sum per variable.
    pub fn self_value(&self, x: &[f64]) -> f64 {
        match self.mode {
            KernelMode::Shared => match self.family[0] {
                KernelFamily::Linear => self.gamma2[0] * x.iter().map(|v| v * v).sum::<f64>(),
                _ => self.gamma2[0],
            },
            KernelMode::PerVariable => (0..self.sigma.len())
                .map(|v| match self.family_of(v) {
                    KernelFamily::Linear => self.gamma2[v] * x[v] * x[v],
                    _ => self.gamma2[v],
                })
                .sum(),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.mode {
            KernelMode::Shared => {
                let fam = self.family[0];
                match fam {
                    KernelFamily::Linear => {
                        self.gamma2[0] * x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
                    }
                    _ => fam.eval_sq(sq_dist(x, y), self.sigma[0], self.gamma2[0]),
                }
            }
            KernelMode::PerVariable => (0..self.sigma.len())
                .map(|v| match self.family_of(v) {
                    KernelFamily::Linear => self.gamma2[v] * x[v] * y[v],
                    fam => {
                        let diff = x[v] - y[v];
                        fam.eval_sq(diff * diff, self.sigma[v], self.gamma2[v])
                    }
                })
                .sum(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }

    fn from_vec(mut v: Vec<T>) -> Self {
        if v.len() == 1 {
            OneOrMany::One(v.remove(0))
        } else {
            OneOrMany::Many(v)
        }
    }
}

/// On-disk form: `{family, nu?, mode, sigma, gamma2, optimize_gamma2?}` where
/// family/nu/sigma/gamma2 are scalars or arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct KernelConfigDoc {
    family: OneOrMany<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nu: Option<OneOrMany<Option<f64>>>,
    mode: KernelMode,
    sigma: OneOrMany<f64>,
    gamma2: OneOrMany<f64>,
    #[serde(default)]
    optimize_gamma2: bool,
}

impl TryFrom<KernelConfigDoc> for KernelConfig {
    type Error = Error;

    fn try_from(doc: KernelConfigDoc) -> Result<Self> {
        let names = doc.family.into_vec();
        let nus = doc.nu.map(|n| n.into_vec()).unwrap_or_default();
        let mut family = Vec::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            let nu = if nus.len() == 1 { nus[0] } else { nus.get(i).copied().flatten() };
            let fam = match name.to_ascii_lowercase().as_str() {
                "gaussian" => KernelFamily::Gaussian,
                "cauchy" => KernelFamily::Cauchy,
                "linear" => KernelFamily::Linear,
                "matern" => KernelFamily::Matern(MaternNu::from_f64(nu.ok_or_else(|| {
                    Error::Invalid(format!("Matérn kernel at position {} needs nu", i + 1))
                })?)?),
                other => return Err(Error::Invalid(format!("unknown kernel family {other:?}"))),
            };
            family.push(fam);
        }
        let cfg = KernelConfig {
            family,
            mode: doc.mode,
            sigma: doc.sigma.into_vec(),
            gamma2: doc.gamma2.into_vec(),
            optimize_gamma2: doc.optimize_gamma2,
        };
        if cfg.mode == KernelMode::Shared {
            cfg.validate(1)?;
        } else {
            cfg.validate(cfg.sigma.len())?;
        }
        Ok(cfg)
    }
}

impl From<KernelConfig> for KernelConfigDoc {
    fn from(cfg: KernelConfig) -> Self {
        let nus: Vec<Option<f64>> = cfg
            .family
            .iter()
            .map(|f| match f {
                KernelFamily::Matern(nu) => Some(nu.value()),
                _ => None,
            })
            .collect();
        let nu = nus.iter().any(Option::is_some).then(|| OneOrMany::from_vec(nus));
        KernelConfigDoc {
            family: OneOrMany::from_vec(cfg.family.iter().map(|f| f.name().to_string()).collect()),
            nu,
            mode: cfg.mode,
            sigma: if cfg.mode == KernelMode::Shared {
                OneOrMany::One(cfg.sigma[0])
            } else {
                OneOrMany::Many(cfg.sigma)
            },
            gamma2: if cfg.mode == KernelMode::Shared {
                OneOrMany::One(cfg.gamma2[0])
            } else {
                OneOrMany::Many(cfg.gamma2)
            },
            optimize_gamma2: cfg.optimize_gamma2,
        }
    }
}

/// Row means and grand mean of an uncentered training kernel matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringStats {
    pub row_means: Vec<f64>,
    pub grand_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub k: DMatrix<f64>,
    pub centered: bool,
    pub train_stats: Option<CenteringStats>,
}

impl KernelMatrix {
    pub fn new(k: DMatrix<f64>) -> Self {
        KernelMatrix {
            k,
            centered: false,
            train_stats: None,
        }
    }
}

/// `K[i, j] = k(x_i, y_j)`. Rows of `x` and `y` are samples.
pub fn kernel_matrix(x: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &KernelConfig) -> Result<KernelMatrix> {
    if x.ncols() != y.ncols() {
        return Err(Error::Dimension(format!(
            "kernel inputs have {} and {} columns",
            x.ncols(),
            y.ncols()
        )));
    }
    cfg.validate(x.ncols())?;
    let xr = rows(x);
    let yr = rows(y);
    let k = DMatrix::from_fn(x.nrows(), y.nrows(), |i, j| cfg.eval(&xr[i], &yr[j]));
    Ok(KernelMatrix::new(k))
}

/// `k(x_i, x_i)` for every row of `x`.
pub fn self_kernel(x: &DMatrix<f64>, cfg: &KernelConfig) -> Vec<f64> {
    rows(x).iter().map(|r| cfg.self_value(r)).collect()
}

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Parameter-independent pieces of a kernel matrix: per-variable squared
/// differences (and products, for linear terms) or full squared distances.
/// Built once and reused while kernel parameters change.
#[derive(Debug, Clone)]
pub struct PairwiseTerms {
    mode: KernelMode,
    n: usize,
    m: usize,
    /// Shared: one matrix of squared distances. PerVariable: one per variable.
    sq: Vec<DMatrix<f64>>,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl PairwiseTerms {
    pub fn new(x: &DMatrix<f64>, y: &DMatrix<f64>, mode: KernelMode) -> Self {
        let (n, m, d) = (x.nrows(), y.nrows(), x.ncols());
        let sq = match mode {
            KernelMode::Shared => {
                let mut sq = DMatrix::zeros(n, m);
                for v in 0..d {
                    for j in 0..m {
                        let yj = y[(j, v)];
                        for i in 0..n {
                            let diff = x[(i, v)] - yj;
                            sq[(i, j)] += diff * diff;
                        }
                    }
                }
                vec![sq]
            }
            KernelMode::PerVariable => (0..d)
                .map(|v| DMatrix::from_fn(n, m, |i, j| (x[(i, v)] - y[(j, v)]).powi(2)))
                .collect(),
        };
        PairwiseTerms {
            mode,
            n,
            m,
            sq,
            x: x.clone(),
            y: y.clone(),
        }
    }

    fn dot(&self, c: usize) -> DMatrix<f64> {
        match self.mode {
            KernelMode::Shared => &self.x * self.y.transpose(),
            KernelMode::PerVariable => {
                DMatrix::from_fn(self.n, self.m, |i, j| self.x[(i, c)] * self.y[(j, c)])
            }
        }
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn components(&self) -> usize {
        self.sq.len()
    }

    /// Kernel matrix of one additive component (the whole kernel in shared mode).
    pub fn component(&self, c: usize, family: KernelFamily, sigma: f64, gamma2: f64) -> DMatrix<f64> {
        match family {
            KernelFamily::Linear => self.dot(c) * gamma2,
            fam => self.sq[c].map(|r2| fam.eval_sq(r2, sigma, gamma2)),
        }
    }

    /// Adds one component into `acc`, scaled by `weight`.
    pub fn accumulate(&self, acc: &mut DMatrix<f64>, c: usize, family: KernelFamily, sigma: f64, gamma2: f64, weight: f64) {
        match family {
            KernelFamily::Linear => *acc += self.dot(c) * (weight * gamma2),
            fam => acc
                .iter_mut()
                .zip(self.sq[c].iter())
                .for_each(|(a, &r2)| *a += weight * fam.eval_sq(r2, sigma, gamma2)),
        }
    }

    pub fn assemble(&self, cfg: &KernelConfig) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(self.n, self.m);
        for c in 0..self.components() {
            self.accumulate(&mut k, c, cfg.family_of(c), cfg.sigma[c], cfg.gamma2[c], 1.0);
        }
        k
    }
}

/// Double centering `(I - 11'/n) K (I - 11'/n)` of a square matrix, in place.
pub fn double_center(k: &mut DMatrix<f64>) -> CenteringStats {
    let n = k.nrows();
    let row_means: Vec<f64> = k.row_iter().map(|r| r.sum() / n as f64).collect();
    let grand_mean = row_means.iter().sum::<f64>() / n as f64;
    // symmetric input: column means equal row means
    let col_means: Vec<f64> = k.column_iter().map(|c| c.sum() / n as f64).collect();
    for j in 0..n {
        for i in 0..n {
            k[(i, j)] += grand_mean - row_means[i] - col_means[j];
        }
    }
    CenteringStats {
        row_means: col_means,
        grand_mean,
    }
}

/// Centers a square training kernel matrix and records what out-of-sample
/// centering needs.
pub fn center_train(km: &KernelMatrix) -> Result<KernelMatrix> {
    if km.centered {
        return Err(Error::Invalid("kernel matrix is already centered".into()));
    }
    if km.k.nrows() != km.k.ncols() {
        return Err(Error::Dimension(format!(
            "training kernel matrix must be square, got {}x{}",
            km.k.nrows(),
            km.k.ncols()
        )));
    }
    let mut k = km.k.clone();
    let stats = double_center(&mut k);
    Ok(KernelMatrix {
        k,
        centered: true,
        train_stats: Some(stats),
    })
}

/// Centers `k(X_new, X_train)` against the training feature mean:
/// `K_test - 1 r' - (K_test 1/n) 1' + g` with `r` the training row means and
/// `g` the training grand mean.
pub fn center_test(k_test: &KernelMatrix, stats: Option<&CenteringStats>) -> Result<KernelMatrix> {
    let stats = stats.ok_or_else(|| Error::Invalid("out-of-sample centering needs training statistics".into()))?;
    let n = stats.row_means.len();
    if k_test.k.ncols() != n {
        return Err(Error::Dimension(format!(
            "test kernel has {} columns, training set has {n} samples",
            k_test.k.ncols()
        )));
    }
    let mut k = k_test.k.clone();
    center_rows_against(&mut k, stats);
    Ok(KernelMatrix {
        k,
        centered: true,
        train_stats: Some(stats.clone()),
    })
}

pub(crate) fn center_rows_against(k: &mut DMatrix<f64>, stats: &CenteringStats) {
    let n = stats.row_means.len();
    for i in 0..k.nrows() {
        let mean_i = k.row(i).sum() / n as f64;
        for j in 0..n {
            k[(i, j)] += stats.grand_mean - stats.row_means[j] - mean_i;
        }
    }
}
