//! Reference implementations for the integration tests. They share no code
//! with the library: plain loops, textbook formulas, Jacobi rotations.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    DMatrix::from_fn(n, d, |_, _| r.sample::<f64, _>(StandardNormal))
}

pub fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
    let a = gaussian_matrix(n, n, seed);
    (&a + a.transpose()) * 0.5
}

/// Cyclic Jacobi eigenvalue iteration. Returns eigenvalues sorted
/// nonincreasing and the matching eigenvectors as columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    off += m[(p, q)] * m[(p, q)];
                }
            }
        }
        if off.sqrt() < 1e-15 * (1.0 + m.norm()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap());
    let vals = order.iter().map(|&i| m[(i, i)]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (vals, vecs)
}

/// `(I - 11'/n) K (I - 11'/m)` with explicit projector matrices.
pub fn projector_center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = k.shape();
    let pn = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let pm = DMatrix::<f64>::identity(m, m) - DMatrix::from_element(m, m, 1.0 / m as f64);
    pn * k * pm
}

/// One textbook kernel: family name, sigma, gamma2, squared distance.
pub fn textbook_kernel(family: &str, r2: f64, sigma: f64, gamma2: f64) -> f64 {
    let r = r2.sqrt();
    match family {
        "gaussian" => gamma2 * (-r2 / (2.0 * sigma * sigma)).exp(),
        "cauchy" => gamma2 / (1.0 + r2 / (sigma * sigma)),
        "matern12" => gamma2 * (-r / sigma).exp(),
        "matern32" => gamma2 * (1.0 + 3f64.sqrt() * r / sigma) * (-(3f64.sqrt()) * r / sigma).exp(),
        "matern52" => {
            let a = 5f64.sqrt() * r / sigma;
            gamma2 * (1.0 + a + 5.0 * r2 / (3.0 * sigma * sigma)) * (-a).exp()
        }
        _ => panic!("unknown family {family}"),
    }
}

/// Feature-space residual of every training sample after keeping `h`
/// components, from a full eigendecomposition of the projector-centered
/// Gram matrix: the sum of squared scores on the discarded directions.
pub fn spex_residual_full(k: &DMatrix<f64>, h: usize) -> Vec<f64> {
    let kc = projector_center(k);
    let (vals, vecs) = jacobi_eigen(&kc);
    let n = k.nrows();
    let mut out = vec![0.0; n];
    for (c, &mu) in vals.iter().enumerate().skip(h) {
        if mu <= 1e-12 * vals[0] {
            continue;
        }
        // score on component c is sqrt(mu) * v_c
        for i in 0..n {
            let t = mu.sqrt() * vecs[(i, c)];
            out[i] += t * t;
        }
    }
    out
}

/// Columns equal up to sign, entrywise within `tol`.
pub fn equal_up_to_sign(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    a.shape() == b.shape()
        && (0..a.ncols()).all(|c| {
            let same = (0..a.nrows()).all(|r| (a[(r, c)] - b[(r, c)]).abs() <= tol);
            let flip = (0..a.nrows()).all(|r| (a[(r, c)] + b[(r, c)]).abs() <= tol);
            same || flip
        })
}

/// Upper-tail fraction above a threshold.
pub fn exceed(values: &[f64], limit: f64) -> f64 {
    values.iter().filter(|&&v| v > limit).count() as f64 / values.len() as f64
}
