use nalgebra::{DMatrix, DVector};

use crate::decomposition::eigen::eigh_top_symmetric;
use crate::decomposition::numerical_rank;
use crate::error::{Error, Result};
use crate::kernel::{double_center, kernel_matrix, KernelConfig};

/// Loss of one K-PCR discrimination: the raw balanced misclassification
/// rate and, when a temperature is given, its logistic relaxation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KpcrLoss {
    pub raw: f64,
    pub smooth: Option<f64>,
}

impl KpcrLoss {
    /// Value used as the optimization objective.
    pub fn objective(&self) -> f64 {
        self.smooth.unwrap_or(self.raw)
    }

    pub(crate) fn degenerate(tau: Option<f64>) -> KpcrLoss {
        KpcrLoss {
            raw: 0.5,
            smooth: tau.map(|_| 0.5),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// K-PCR loss from an uncentered kernel matrix over stacked samples whose
/// first `n_faulty` rows are faulty (label 1) and the rest normal (label 0).
///
/// The labels are regressed on the top-`h` centered kernel PCA scores plus
/// an intercept; a sample is called faulty when its fitted value exceeds 0.5.
pub fn kpcr_from_kernel(mut k: DMatrix<f64>, n_faulty: usize, h: usize, tau: Option<f64>) -> Result<KpcrLoss> {
    let n = k.nrows();
    if n_faulty == 0 || n_faulty >= n {
        return Err(Error::Invalid("K-PCR needs samples of both classes".into()));
    }
    double_center(&mut k);
    let (values, vectors) = eigh_top_symmetric(&k, h)?;
    let rank = numerical_rank(&values);
    if h > rank {
        return Err(Error::RankDeficient { requested: h, rank });
    }
    let y_mean = n_faulty as f64 / n as f64;
    let y = DVector::from_fn(n, |i, _| if i < n_faulty { 1.0 - y_mean } else { -y_mean });
    let v = vectors.columns(0, h);
    let fitted = v * (v.transpose() * &y);

    let n_normal = n - n_faulty;
    let mut correct_f = 0usize;
    let mut correct_n = 0usize;
    let mut soft_f = 0.0;
    let mut soft_n = 0.0;
    for i in 0..n {
        let margin = y_mean + fitted[i] - 0.5;
        if i < n_faulty {
            correct_f += (margin > 0.0) as usize;
            if let Some(t) = tau {
                soft_f += sigmoid(margin / t);
            }
        } else {
            correct_n += (margin <= 0.0) as usize;
            if let Some(t) = tau {
                soft_n += sigmoid(-margin / t);
            }
        }
    }
    let raw = 1.0 - (correct_f as f64 / n_faulty as f64 + correct_n as f64 / n_normal as f64) / 2.0;
    let smooth = tau.map(|_| 1.0 - (soft_f / n_faulty as f64 + soft_n / n_normal as f64) / 2.0);
    if !raw.is_finite() || smooth.is_some_and(|s| !s.is_finite()) {
        return Err(Error::Numerical("K-PCR loss is not finite".into()));
    }
    Ok(KpcrLoss { raw, smooth })
}

pub(crate) fn stack(xf: &DMatrix<f64>, xn: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if xf.ncols() != xn.ncols() {
        return Err(Error::Dimension(format!(
            "faulty draw has {} variables, normal draw {}",
            xf.ncols(),
            xn.ncols()
        )));
    }
    let mut x = DMatrix::zeros(xf.nrows() + xn.nrows(), xf.ncols());
    x.rows_mut(0, xf.nrows()).copy_from(xf);
    x.rows_mut(xf.nrows(), xn.nrows()).copy_from(xn);
    Ok(x)
}

/// Raw K-PCR sub-loss of a normal and a faulty draw.
pub fn kpcr_subloss(xn: &DMatrix<f64>, xf: &DMatrix<f64>, cfg: &KernelConfig, h: usize) -> Result<f64> {
    Ok(kpcr_loss(xn, xf, cfg, h, None)?.raw)
}

/// K-PCR loss with an optional logistic relaxation of temperature `tau`.
pub fn kpcr_loss(xn: &DMatrix<f64>, xf: &DMatrix<f64>, cfg: &KernelConfig, h: usize, tau: Option<f64>) -> Result<KpcrLoss> {
    let x = stack(xf, xn)?;
    let k = kernel_matrix(&x, &x, cfg)?.k;
    kpcr_from_kernel(k, xf.nrows(), h, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn blob(n: usize, d: usize, shift: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            shift + 0.3 * z
        })
    }

    #[test]
    fn separated_blobs_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xn = blob(20, 3, 0.0, &mut rng);
        let xf = blob(20, 3, 5.0, &mut rng);
        let cfg = KernelConfig::shared(KernelFamily::Gaussian, 2.0, 1.0);
        assert_eq!(kpcr_subloss(&xn, &xf, &cfg, 4).unwrap(), 0.0);
        let l = kpcr_loss(&xn, &xf, &cfg, 4, Some(0.05)).unwrap();
        assert!(l.smooth.unwrap() < 1e-3);
    }

    #[test]
    fn identical_classes_give_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = blob(15, 3, 0.0, &mut rng);
        let cfg = KernelConfig::shared(KernelFamily::Gaussian, 1.0, 1.0);
        assert_eq!(kpcr_subloss(&x, &x, &cfg, 4).unwrap(), 0.5);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let x = DMatrix::from_element(4, 2, 1.0);
        let cfg = KernelConfig::shared(KernelFamily::Gaussian, 1.0, 1.0);
        assert!(matches!(
            kpcr_subloss(&x, &x, &cfg, 2),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn class_swap_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = blob(12, 2, 0.0, &mut rng);
        let b = blob(12, 2, 0.4, &mut rng);
        let cfg = KernelConfig::shared(KernelFamily::Cauchy, 0.8, 1.0);
        let l1 = kpcr_loss(&a, &b, &cfg, 3, Some(0.1)).unwrap();
        let l2 = kpcr_loss(&b, &a, &cfg, 3, Some(0.1)).unwrap();
        assert!((l1.raw - l2.raw).abs() < 1e-12);
        assert!((l1.smooth.unwrap() - l2.smooth.unwrap()).abs() < 1e-12);
    }
}
