//! Test-only oracles and random fixtures, written independently of the crate's solvers.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rca_core::linalg::SymMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `A Aᵀ / n + ridge·I` for a Gaussian `A`, well conditioned for moderate ridge.
pub fn random_pd(n: usize, ridge: f64, rng: &mut ChaCha8Rng) -> SymMatrix {
    let a = gaussian(n, n + 3, rng);
    SymMatrix::symmetrize(&a * a.transpose() / n as f64 + DMatrix::identity(n, n) * ridge)
}

/// Determinant by partial-pivot Gaussian elimination.
pub fn det(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut a = m.clone();
    let mut d = 1.0;
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| a[(i, c)].abs().total_cmp(&a[(j, c)].abs()))
            .unwrap();
        if a[(piv, c)] == 0.0 {
            return 0.0;
        }
        if piv != c {
            a.swap_rows(piv, c);
            d = -d;
        }
        d *= a[(c, c)];
        for r in c + 1..n {
            let f = a[(r, c)] / a[(c, c)];
            for k in c..n {
                a[(r, k)] -= f * a[(c, k)];
            }
        }
    }
    d
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut inv = DMatrix::<f64>::identity(n, n);
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| a[(i, c)].abs().total_cmp(&a[(j, c)].abs()))
            .unwrap();
        a.swap_rows(piv, c);
        inv.swap_rows(piv, c);
        let d = a[(c, c)];
        for k in 0..n {
            a[(c, k)] /= d;
            inv[(c, k)] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[(r, c)];
                for k in 0..n {
                    a[(r, k)] -= f * a[(c, k)];
                    inv[(r, k)] -= f * inv[(c, k)];
                }
            }
        }
    }
    inv
}

/// Log density of `N(0, k)` at every column of `m`, straight from the definition.
pub fn mvn_loglik_columns(m: &DMatrix<f64>, k: &DMatrix<f64>) -> f64 {
    let d = m.nrows() as f64;
    let kinv = inverse(k);
    let logdet = det(k).ln();
    m.column_iter()
        .map(|x| {
            let x = x.into_owned();
            -0.5 * (d * (2.0 * std::f64::consts::PI).ln()
                + logdet
                + (x.transpose() * &kinv * &x)[(0, 0)])
        })
        .sum()
}

/// Conditional of the first block `a` of a zero-mean Gaussian with joint
/// covariance `joint` given the second block equals `obs`.
pub fn condition(
    joint: &DMatrix<f64>,
    a: usize,
    obs: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = joint.nrows();
    let b = n - a;
    let saa = joint.view((0, 0), (a, a)).into_owned();
    let sab = joint.view((0, a), (a, b)).into_owned();
    let sbb = joint.view((a, a), (b, b)).into_owned();
    let sbb_inv = inverse(&sbb);
    let mean = &sab * &sbb_inv * obs;
    let cov = saa - &sab * &sbb_inv * sab.transpose();
    (mean, cov)
}

/// Characteristic polynomial coefficients `c` of `det(tI − A) = Σ c_k t^k` (Faddeev–LeVerrier).
pub fn char_poly(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[n] = 1.0;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m + DMatrix::identity(n, n) * coeffs[n - k + 1];
        coeffs[n - k] = -(a * &m).trace() / k as f64;
    }
    coeffs
}

pub fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
