use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 10_000;

/// Symmetric eigendecomposition with eigenvalues in nonincreasing order and
/// columns of `V` signed so that each eigenvector's largest-magnitude entry
/// is positive (the first such entry on ties).
pub fn eigh_sym(a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_symmetric(a)?;
    let n = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, MAX_SWEEPS)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| eig.eigenvalues[q].total_cmp(&eig.eigenvalues[p]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &k) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(k).into_owned();
        canonical_sign(&mut col);
        vectors.set_column(c, &col);
    }
    Ok((values, vectors))
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!("eigensolver needs a square matrix, got {}x{}", n, a.ncols())));
    }
    if n == 0 {
        return Err(Error::Empty("eigensolver on an empty matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let scale = a.amax().max(1.0);
    for j in 0..n {
        for i in 0..j {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::Invalid(format!(
                    "matrix is not symmetric at ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    Ok(())
}

/// All eigenvalues (nonincreasing) and the eigenvectors of the `h` largest,
/// with the same sign convention as [`eigh_sym`].
///
/// Householder reduction to tridiagonal form, implicit QL for the
/// eigenvalues, inverse iteration for the wanted vectors (reorthogonalized
/// within clusters) and back-transformation. Cheaper than the full solve
/// when `h` is small.
pub fn eigh_top(a: &DMatrix<f64>, h: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_symmetric(a)?;
    eigh_top_symmetric(a, h)
}

/// [`eigh_top`] for inputs symmetric by construction; reads the lower triangle.
pub(crate) fn eigh_top_symmetric(a: &DMatrix<f64>, h: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if n == 0 || n != a.ncols() {
        return Err(Error::Dimension(format!("eigensolver needs a nonempty square matrix, got {}x{}", n, a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    if h > n {
        return Err(Error::Invalid(format!("cannot take {h} eigenvectors of a {n}x{n} matrix")));
    }
    let tri = Tridiagonal::reduce(a);
    let mut values = tri.d.clone();
    let mut off = tri.e.clone();
    tql_values(&mut values, &mut off)?;
    values.sort_by(|p, q| q.total_cmp(p));

    let norm = tri
        .d
        .iter()
        .zip(&tri.e)
        .map(|(d, e)| d.abs() + 2.0 * e.abs())
        .fold(0.0, f64::max);
    if norm == 0.0 {
        return Ok((DVector::zeros(n), DMatrix::identity(n, h)));
    }
    let cluster_gap = 1e-3 * norm;
    let mut vectors = DMatrix::zeros(n, h);
    let mut found: Vec<Vec<f64>> = Vec::with_capacity(h);
    for (k, &lambda) in values.iter().take(h).enumerate() {
        let cluster: Vec<usize> = (0..k).filter(|&j| (values[j] - lambda).abs() <= cluster_gap).collect();
        // nudge repeated shifts apart so the factorizations differ
        let shift = lambda + cluster.len() as f64 * 1e-14 * norm;
        let mut z: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i * 7 + k * 13) as f64).sin()).collect();
        let factor = TriLu::new(&tri.d, &tri.e, shift, norm);
        for _ in 0..4 {
            factor.solve(&mut z);
            for &j in &cluster {
                let dot: f64 = z.iter().zip(&found[j]).map(|(a, b)| a * b).sum();
                z.iter_mut().zip(&found[j]).for_each(|(a, b)| *a -= dot * b);
            }
            let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(nz > 0.0) || !nz.is_finite() {
                return Err(Error::Numerical("inverse iteration broke down".into()));
            }
            z.iter_mut().for_each(|v| *v /= nz);
        }
        found.push(z.clone());
        let mut col = DVector::from_vec(tri.back_transform(z));
        col /= col.norm();
        canonical_sign(&mut col);
        vectors.set_column(k, &col);
    }
    Ok((DVector::from_vec(values), vectors))
}

/// `A = Q T Q'` with `Q = H_0 H_1 ... H_{n-2}` stored as reflectors.
struct Tridiagonal {
    d: Vec<f64>,
    /// `e[i] = T[i, i+1]`; `e[n-1] = 0`.
    e: Vec<f64>,
    /// Reflector `k` acts on indices `k+1..n` as `I - beta v v'`.
    reflectors: Vec<(f64, Vec<f64>)>,
}

impl Tridiagonal {
    fn reduce(a: &DMatrix<f64>) -> Tridiagonal {
        let n = a.nrows();
        // column-major copy; only the lower triangle is read
        let mut m: Vec<f64> = a.as_slice().to_vec();
        let at = |i: usize, j: usize| i + j * n;
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n];
        let mut reflectors = Vec::with_capacity(n.saturating_sub(1));
        let mut p = vec![0.0; n];
        for k in 0..n.saturating_sub(1) {
            d[k] = m[at(k, k)];
            let len = n - k - 1;
            let mut v: Vec<f64> = (0..len).map(|r| m[at(k + 1 + r, k)]).collect();
            let xnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if xnorm == 0.0 || (len == 1) {
                e[k] = v[0];
                reflectors.push((0.0, v));
                continue;
            }
            let alpha = if v[0] > 0.0 { -xnorm } else { xnorm };
            v[0] -= alpha;
            let vnorm2 = v.iter().map(|x| x * x).sum::<f64>();
            if vnorm2 == 0.0 {
                e[k] = alpha;
                reflectors.push((0.0, v));
                continue;
            }
            let beta = 2.0 / vnorm2;
            e[k] = alpha;
            // p = beta * A22 v, reading the lower triangle only
            let p = &mut p[..len];
            p.iter_mut().for_each(|x| *x = 0.0);
            for c in 0..len {
                let base = (k + 1 + c) * n + k + 1;
                let col = &m[base + c..base + len];
                let vc = v[c];
                let mut acc = col[0] * v[c];
                for ((pr, a), vr) in p[c + 1..].iter_mut().zip(&col[1..]).zip(&v[c + 1..]) {
                    *pr += a * vc;
                    acc += a * vr;
                }
                p[c] += acc;
            }
            let mut pv = 0.0;
            for (pr, vr) in p.iter_mut().zip(&v) {
                *pr *= beta;
                pv += *pr * vr;
            }
            let kfac = 0.5 * beta * pv;
            p.iter_mut().zip(&v).for_each(|(pr, vr)| *pr -= kfac * vr);
            // A22 -= v w' + w v', lower triangle
            for c in 0..len {
                let base = (k + 1 + c) * n + k + 1;
                let (vc, wc) = (v[c], p[c]);
                let col = &mut m[base + c..base + len];
                for ((a, vr), wr) in col.iter_mut().zip(&v[c..]).zip(&p[c..]) {
                    *a -= vr * wc + wr * vc;
                }
            }
            reflectors.push((beta, v));
        }
        d[n - 1] = m[at(n - 1, n - 1)];
        Tridiagonal { d, e, reflectors }
    }

    fn back_transform(&self, mut z: Vec<f64>) -> Vec<f64> {
        for (k, (beta, v)) in self.reflectors.iter().enumerate().rev() {
            if *beta == 0.0 {
                continue;
            }
            let tail = &mut z[k + 1..];
            let dot: f64 = tail.iter().zip(v).map(|(a, b)| a * b).sum();
            let f = beta * dot;
            tail.iter_mut().zip(v).for_each(|(a, b)| *a -= f * b);
        }
        z
    }
}

#[inline]
fn hypot(a: f64, b: f64) -> f64 {
    // plain formula unless it may have overflowed or underflowed
    let r = (a * a + b * b).sqrt();
    if r.is_finite() && r > 1e-150 {
        r
    } else {
        a.hypot(b)
    }
}

/// Eigenvalues of a symmetric tridiagonal matrix by implicit QL, in place.
fn tql_values(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    // off-diagonals below this are at the level of rounding error in the
    // whole matrix; without the floor, near-null blocks (centered kernel
    // matrices) can fail the relative test forever
    let floor = f64::EPSILON * d.iter().zip(e.iter()).map(|(a, b)| a.abs() + 2.0 * b.abs()).fold(0.0, f64::max);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd || e[m].abs() <= floor {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::Numerical("tridiagonal QL did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = hypot(g, 1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = hypot(f, g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// LU factorization with partial pivoting of `T - shift I`.
struct TriLu {
    u0: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    mult: Vec<f64>,
    swapped: Vec<bool>,
}

impl TriLu {
    fn new(d: &[f64], e: &[f64], shift: f64, norm: f64) -> TriLu {
        let n = d.len();
        let tiny = f64::EPSILON * norm;
        let guard = |x: f64| if x.abs() < tiny { tiny.copysign(if x == 0.0 { 1.0 } else { x }) } else { x };
        let mut u0 = vec![0.0; n];
        let mut u1 = vec![0.0; n];
        let mut u2 = vec![0.0; n];
        let mut mult = vec![0.0; n];
        let mut swapped = vec![false; n];
        let mut cur_d = d[0] - shift;
        let mut cur_s = if n > 1 { e[0] } else { 0.0 };
        for i in 0..n.saturating_sub(1) {
            let sub = e[i];
            let next_d = d[i + 1] - shift;
            let next_s = if i + 2 < n { e[i + 1] } else { 0.0 };
            if cur_d.abs() >= sub.abs() {
                let piv = guard(cur_d);
                let m = sub / piv;
                u0[i] = piv;
                u1[i] = cur_s;
                mult[i] = m;
                cur_d = next_d - m * cur_s;
                cur_s = next_s;
            } else {
                let m = cur_d / sub;
                u0[i] = sub;
                u1[i] = next_d;
                u2[i] = next_s;
                mult[i] = m;
                swapped[i] = true;
                cur_d = cur_s - m * next_d;
                cur_s = -m * next_s;
            }
        }
        u0[n - 1] = guard(cur_d);
        TriLu {
            u0,
            u1,
            u2,
            mult,
            swapped,
        }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = b.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                b.swap(i, i + 1);
            }
            b[i + 1] -= self.mult[i] * b[i];
        }
        for i in (0..n).rev() {
            let mut v = b[i];
            if i + 1 < n {
                v -= self.u1[i] * b[i + 1];
            }
            if i + 2 < n {
                v -= self.u2[i] * b[i + 2];
            }
            b[i] = v / self.u0[i];
        }
    }
}

fn canonical_sign(v: &mut DVector<f64>) {
    let max = v.amax();
    if let Some(lead) = v.iter().find(|x| x.abs() >= max * (1.0 - 1e-9)) {
        if *lead < 0.0 {
            v.neg_mut();
        }
    }
}

/// Count of eigenvalues above `1e-10 * max` (input sorted nonincreasing).
pub fn numerical_rank(values: &DVector<f64>) -> usize {
    let top = values.iter().copied().fold(0.0f64, f64::max);
    if top <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&v| v > 1e-10 * top).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_and_diagonal() {
        let (l, _) = eigh_sym(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(l.as_slice(), &[1.0, 1.0, 1.0]);
        let (l, v) = eigh_sym(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]))).unwrap();
        assert_eq!(l.as_slice(), &[3.0, 1.0]);
        assert_abs_diff_eq!(v, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn two_by_two_hand_solution() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (l, v) = eigh_sym(&a).unwrap();
        assert_abs_diff_eq!(l[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l[1], 1.0, epsilon = 1e-12);
        let r = 0.5f64.sqrt();
        assert_abs_diff_eq!(v, DMatrix::from_row_slice(2, 2, &[r, r, r, -r]), epsilon = 1e-12);
    }

    #[test]
    fn rejects_asymmetric_and_nonfinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(eigh_sym(&a), Err(Error::Invalid(_))));
        let a = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(eigh_sym(&a), Err(Error::Numerical(_))));
        assert!(eigh_sym(&DMatrix::zeros(2, 3)).is_err());
    }

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &b + b.transpose()
    }

    fn assert_top_matches(a: &DMatrix<f64>, h: usize) {
        let (full_l, full_v) = eigh_sym(a).unwrap();
        let (l, v) = eigh_top(a, h).unwrap();
        let scale = a.norm();
        for k in 0..a.nrows() {
            assert_abs_diff_eq!(l[k], full_l[k], epsilon = 1e-9 * scale);
        }
        for k in 0..h {
            let col = v.column(k);
            assert!((a * col - col * l[k]).norm() <= 1e-8 * scale);
            assert_abs_diff_eq!(col.norm(), 1.0, epsilon = 1e-10);
            if k + 1 < a.nrows() && (full_l[k] - full_l[k + 1]).abs() > 1e-6 * scale && (k == 0 || (full_l[k - 1] - full_l[k]).abs() > 1e-6 * scale) {
                assert_abs_diff_eq!(col.into_owned(), full_v.column(k).into_owned(), epsilon = 1e-7);
            }
        }
        let vtv = v.transpose() * &v;
        assert_abs_diff_eq!(vtv, DMatrix::identity(h, h), epsilon = 1e-8);
    }

    #[test]
    fn top_solver_matches_full_solver() {
        for (n, seed) in [(1, 0), (2, 1), (3, 2), (7, 3), (20, 4), (45, 5)] {
            assert_top_matches(&random_symmetric(n, seed), n.min(4));
        }
    }

    #[test]
    fn top_solver_handles_repeated_eigenvalues() {
        assert_top_matches(&DMatrix::identity(5, 5), 3);
        let d = DVector::from_vec(vec![3.0, 3.0, 3.0, 1.0, 0.0, 0.0]);
        let q = eigh_sym(&random_symmetric(6, 9)).unwrap().1;
        let a = &q * DMatrix::from_diagonal(&d) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        assert_top_matches(&a, 4);
        assert_top_matches(&DMatrix::from_element(4, 4, 1.0), 2);
        assert_top_matches(&DMatrix::zeros(3, 3), 2);
    }

    #[test]
    fn rank_counts_cutoff() {
        let v = DVector::from_vec(vec![1.0, 1e-9, 1e-11, -1e-14]);
        assert_eq!(numerical_rank(&v), 2);
        assert_eq!(numerical_rank(&DVector::from_vec(vec![0.0, 0.0])), 0);
    }
}
