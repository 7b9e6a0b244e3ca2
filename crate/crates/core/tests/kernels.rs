mod support;

use kmspc::decomposition::eigh_sym;
use kmspc::kernel::{center_test, center_train, kernel_matrix, k_matern, KernelConfig, KernelFamily, KernelMatrix, MaternNu};
use nalgebra::DMatrix;
use proptest::prelude::*;
use support::*;

const FAMILIES: [(KernelFamily, &str); 5] = [
    (KernelFamily::Gaussian, "gaussian"),
    (KernelFamily::Cauchy, "cauchy"),
    (KernelFamily::Matern(MaternNu::Half), "matern12"),
    (KernelFamily::Matern(MaternNu::ThreeHalves), "matern32"),
    (KernelFamily::Matern(MaternNu::FiveHalves), "matern52"),
];

fn family() -> impl Strategy<Value = usize> {
    0usize..FAMILIES.len()
}

fn config(fam: usize, per_variable: bool, d: usize, sigma: &[f64], gamma2: &[f64]) -> KernelConfig {
    let f = FAMILIES[fam].0;
    if per_variable {
        let mut c = KernelConfig::per_variable(f, d, 1.0, 1.0);
        c.sigma = sigma[..d].to_vec();
        c.gamma2 = gamma2[..d].to_vec();
        c
    } else {
        KernelConfig::shared(f, sigma[0], gamma2[0])
    }
}

fn textbook_matrix(x: &DMatrix<f64>, fam: usize, per_variable: bool, sigma: &[f64], gamma2: &[f64]) -> DMatrix<f64> {
    let name = FAMILIES[fam].1;
    let d = x.ncols();
    DMatrix::from_fn(x.nrows(), x.nrows(), |i, j| {
        if per_variable {
            (0..d)
                .map(|v| textbook_kernel(name, (x[(i, v)] - x[(j, v)]).powi(2), sigma[v], gamma2[v]))
                .sum()
        } else {
            let r2: f64 = (0..d).map(|v| (x[(i, v)] - x[(j, v)]).powi(2)).sum();
            textbook_kernel(name, r2, sigma[0], gamma2[0])
        }
    })
}

#[test]
fn centered_gram_matrices_are_psd_with_zero_row_sums() {
    // 50 configurations cycling through families and modes
    for c in 0..50u64 {
        let fam = (c as usize) % FAMILIES.len();
        let per_variable = c % 2 == 1;
        let d = 2 + (c as usize % 4);
        let x = gaussian_matrix(30, d, 500 + c);
        let mut r = rng(900 + c);
        use rand::Rng;
        let sigma: Vec<f64> = (0..d).map(|_| r.random_range(0.2..4.0)).collect();
        let gamma2: Vec<f64> = (0..d).map(|_| r.random_range(0.5..2.0)).collect();
        let cfg = config(fam, per_variable, d, &sigma, &gamma2);
        let kc = center_train(&kernel_matrix(&x, &x, &cfg).unwrap()).unwrap().k;
        for i in 0..30 {
            assert!(kc.row(i).sum().abs() <= 1e-8, "config {c}");
        }
        let (vals, _) = eigh_sym(&kc).unwrap();
        assert!(vals[vals.len() - 1] >= -1e-8 * vals[0], "config {c}");
    }
}

#[test]
fn matern_half_is_the_exponential_kernel() {
    for (x, y, s) in [(0.0, 1.0, 1.0), (0.3, -2.0, 0.7), (5.0, 5.0, 2.0)] {
        let k = k_matern(&[x], &[y], s, 1.3, 0.5).unwrap();
        assert_eq!(k, 1.3 * (-(x - y).abs() / s).exp());
    }
}

#[test]
fn huge_sigma_gives_constant_matrix() {
    // Matern 1/2 departs from the constant linearly in r / sigma, so the
    // points stay within a small box to keep that term below the tolerance.
    let x = gaussian_matrix(10, 3, 4).map(|v| 0.1 * v.tanh());
    for (fam, _) in FAMILIES {
        for cfg in [KernelConfig::shared(fam, 1e6, 1.0), KernelConfig::per_variable(fam, 3, 1e6, 1.0)] {
            let total: f64 = cfg.gamma2.iter().sum();
            let k = kernel_matrix(&x, &x, &cfg).unwrap().k;
            assert!(k.iter().all(|v| (v - total).abs() <= 1e-6), "{fam:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_matrix_matches_textbook_formulas(
        seed in 0u64..10_000,
        fam in family(),
        per_variable in any::<bool>(),
        sigma in prop::collection::vec(0.1f64..5.0, 4),
        gamma2 in prop::collection::vec(0.1f64..3.0, 4),
    ) {
        let x = gaussian_matrix(9, 4, seed);
        let cfg = config(fam, per_variable, 4, &sigma, &gamma2);
        let k = kernel_matrix(&x, &x, &cfg).unwrap().k;
        let oracle = textbook_matrix(&x, fam, per_variable, &sigma, &gamma2);
        prop_assert!((&k - &oracle).amax() <= 1e-12 * oracle.amax());
    }

    #[test]
    fn symmetric_with_diagonal_bound(
        seed in 0u64..10_000,
        fam in family(),
        per_variable in any::<bool>(),
        sigma in prop::collection::vec(0.1f64..5.0, 3),
        gamma2 in prop::collection::vec(0.1f64..3.0, 3),
    ) {
        let x = gaussian_matrix(12, 3, seed);
        let cfg = config(fam, per_variable, 3, &sigma, &gamma2);
        let k = kernel_matrix(&x, &x, &cfg).unwrap().k;
        let diag: f64 = if per_variable { gamma2.iter().sum() } else { gamma2[0] };
        for i in 0..12 {
            prop_assert!((k[(i, i)] - diag).abs() <= 1e-12 * diag);
            for j in 0..12 {
                prop_assert_eq!(k[(i, j)], k[(j, i)]);
                prop_assert!(k[(i, j)] <= diag * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn uncentered_gram_is_psd(
        seed in 0u64..10_000,
        fam in family(),
        per_variable in any::<bool>(),
        sigma in prop::collection::vec(0.1f64..5.0, 3),
        gamma2 in prop::collection::vec(0.1f64..3.0, 3),
    ) {
        let x = gaussian_matrix(20, 3, seed);
        let cfg = config(fam, per_variable, 3, &sigma, &gamma2);
        let k = kernel_matrix(&x, &x, &cfg).unwrap().k;
        let (vals, _) = eigh_sym(&k).unwrap();
        prop_assert!(vals[vals.len() - 1] >= -1e-8 * vals[0]);
    }

    #[test]
    fn centering_matches_projector_and_is_idempotent(seed in 0u64..10_000, n in 2usize..15, m in 1usize..10) {
        let k = gaussian_matrix(n, n, seed);
        let k = (&k + k.transpose()) * 0.5;
        let once = center_train(&KernelMatrix::new(k.clone())).unwrap();
        prop_assert!((&once.k - projector_center(&k)).amax() <= 1e-10);
        let twice = projector_center(&once.k);
        prop_assert!((&twice - &once.k).amax() <= 1e-10);

        // a test block centered against training statistics
        let kt = gaussian_matrix(m, n, seed + 1);
        let stats = once.train_stats.clone().unwrap();
        let ct = center_test(&KernelMatrix::new(kt.clone()), Some(&stats)).unwrap().k;
        let ones_m = DMatrix::from_element(m, n, 1.0 / n as f64);
        let ones_n = DMatrix::from_element(n, n, 1.0 / n as f64);
        let oracle = &kt - &ones_m * &k - &kt * &ones_n + &ones_m * &k * &ones_n;
        prop_assert!((&ct - oracle).amax() <= 1e-10);
    }
}
