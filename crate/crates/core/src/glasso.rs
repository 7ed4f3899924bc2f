//! ℓ1-penalized Gaussian maximum likelihood for sparse precision matrices.
//!
//! Maximizes `ln|Λ| − tr(S Λ) − λ Σ_{i≠j} |Λ_ij|` by block coordinate ascent on
//! the covariance estimate: each column is updated by solving a lasso problem
//! with coordinate descent. Diagonal entries are unpenalized unless
//! [`GlassoConfig::penalize_diagonal`] is set.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::edge::Edge;
use crate::error::{RcaError, Result};
use crate::linalg::{cholesky, SymMatrix};

/// Off-diagonal entries at or below this magnitude are treated as zero.
pub const ZERO_THRESHOLD: f64 = 1e-8;

/// Relative ridge added to a singular empirical covariance before fitting.
pub const SINGULAR_RIDGE: f64 = 1e-8;

/// A positive-definite precision matrix together with its off-diagonal support.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePrecision {
    entries: SymMatrix,
    support: BTreeSet<Edge>,
}

impl SparsePrecision {
    pub fn new(entries: SymMatrix) -> Result<Self> {
        cholesky(&entries)?;
        Ok(Self::new_unchecked(entries))
    }

    pub(crate) fn new_unchecked(entries: SymMatrix) -> Self {
        let p = entries.dim();
        let mut support = BTreeSet::new();
        for j in 0..p {
            for i in 0..j {
                if entries[(i, j)].abs() > ZERO_THRESHOLD {
                    support.insert(Edge(i, j));
                }
            }
        }
        SparsePrecision { entries, support }
    }

    pub fn identity(p: usize) -> Self {
        Self::new_unchecked(SymMatrix::identity(p))
    }

    pub fn dim(&self) -> usize {
        self.entries.dim()
    }

    pub fn entries(&self) -> &SymMatrix {
        &self.entries
    }

    pub fn support(&self) -> &BTreeSet<Edge> {
        &self.support
    }

    /// `Σ_{i≠j} |Λ_ij|`, both triangles.
    pub fn offdiag_l1(&self) -> f64 {
        offdiag_l1(self.entries.as_matrix())
    }

    pub fn covariance(&self) -> Result<SymMatrix> {
        Ok(cholesky(&self.entries)?.inverse())
    }
}

fn offdiag_l1(m: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j {
                s += m[(i, j)].abs();
            }
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlassoConfig {
    /// Sweep stops once the mean absolute change of the off-diagonal covariance
    /// estimate falls below `tol · mean|S|` and the KKT test passes.
    pub tol: f64,
    pub kkt_tol: f64,
    pub max_iter: usize,
    /// Coordinate-descent tolerance for each column lasso, in gradient units.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub penalize_diagonal: bool,
    /// Record the objective after every sweep (costs one extra factorization per sweep).
    pub record_objective: bool,
}

impl Default for GlassoConfig {
    fn default() -> Self {
        GlassoConfig {
            tol: 1e-6,
            kkt_tol: 1e-6,
            max_iter: 500,
            inner_tol: 1e-10,
            inner_max_iter: 10_000,
            penalize_diagonal: false,
            record_objective: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlassoFit {
    pub precision: SparsePrecision,
    pub converged: bool,
    pub sweeps: usize,
    pub kkt_residual: f64,
    /// Objective after each sweep; empty unless `record_objective` was set.
    pub objective_trace: Vec<f64>,
    /// `ln|W|` of the covariance iterate after each sweep; empty unless `record_objective` was set.
    pub dual_trace: Vec<f64>,
}

impl GlassoFit {
    /// Converts a non-converged fit into [`RcaError::NoConvergence`].
    pub fn into_result(self) -> Result<SparsePrecision> {
        if self.converged {
            Ok(self.precision)
        } else {
            Err(RcaError::NoConvergence {
                solver: "glasso",
                iterations: self.sweeps,
                last_change: self.kkt_residual,
            })
        }
    }
}

#[inline]
fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

pub fn glasso_fit(
    empirical_cov: &SymMatrix,
    lambda: f64,
    config: &GlassoConfig,
) -> Result<GlassoFit> {
    glasso_fit_warm(empirical_cov, lambda, config, None)
}

/// [`glasso_fit`] with an optional starting precision (for example the previous EM iterate).
pub fn glasso_fit_warm(
    empirical_cov: &SymMatrix,
    lambda: f64,
    config: &GlassoConfig,
    init: Option<&SparsePrecision>,
) -> Result<GlassoFit> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(RcaError::invalid(format!(
            "glasso: lambda must be >= 0, got {lambda}"
        )));
    }
    let p = empirical_cov.dim();
    if let Some(init) = init {
        if init.dim() != p {
            return Err(RcaError::invalid(
                "glasso: warm start has the wrong dimension",
            ));
        }
    }

    let s = if cholesky(empirical_cov).is_ok() {
        empirical_cov.clone()
    } else {
        let ridge = SINGULAR_RIDGE * empirical_cov.trace() / p as f64;
        log::debug!("glasso: singular empirical covariance, adding ridge {ridge:e}");
        empirical_cov.add_diagonal(ridge)
    };
    let s_mat = s.as_matrix();
    let diag_penalty = if config.penalize_diagonal {
        lambda
    } else {
        0.0
    };
    let mean_abs_s = s_mat.iter().map(|v| v.abs()).sum::<f64>() / (p * p) as f64;
    let stop_change = config.tol * mean_abs_s;

    // covariance iterate and per-column lasso coefficients
    let mut w = s_mat.clone();
    for i in 0..p {
        w[(i, i)] += diag_penalty;
    }
    let mut beta = DMatrix::<f64>::zeros(p, p);
    if let Some(init) = init {
        if let Ok(cov) = init.covariance() {
            let mut w0 = cov.into_matrix();
            for i in 0..p {
                w0[(i, i)] = s_mat[(i, i)] + diag_penalty;
            }
            if cholesky(&SymMatrix::symmetrize(w0.clone())).is_ok() {
                w = w0;
                let theta = init.entries().as_matrix();
                for j in 0..p {
                    for k in 0..p {
                        if k != j {
                            beta[(k, j)] = -theta[(k, j)] / theta[(j, j)];
                        }
                    }
                }
            }
        }
    }

    let mut r = vec![0.0; p];
    let mut objective_trace = Vec::new();
    let mut dual_trace = Vec::new();
    let mut sweeps = 0;
    let mut converged = false;
    let mut kkt = f64::INFINITY;
    let mut precision = None;

    if p == 1 {
        converged = true;
    }

    while !converged && sweeps < config.max_iter {
        sweeps += 1;
        let mut total_change = 0.0;
        for j in 0..p {
            // r = V β over k ≠ j, where V = W without row/column j
            r.fill(0.0);
            for k in 0..p {
                let bk = beta[(k, j)];
                if k == j || bk == 0.0 {
                    continue;
                }
                for l in 0..p {
                    r[l] += w[(l, k)] * bk;
                }
            }
            let mut signs = vec![0i8; p];
            let mut polish_failed = false;
            for _ in 0..config.inner_max_iter {
                let mut max_step = 0.0f64;
                let mut signs_changed = false;
                for k in 0..p {
                    if k == j {
                        continue;
                    }
                    let vkk = w[(k, k)];
                    let bk = beta[(k, j)];
                    let z = s_mat[(k, j)] - (r[k] - vkk * bk);
                    let new = soft_threshold(z, lambda) / vkk;
                    let d = new - bk;
                    if d != 0.0 {
                        beta[(k, j)] = new;
                        for l in 0..p {
                            r[l] += w[(l, k)] * d;
                        }
                        max_step = max_step.max(d.abs() * vkk);
                    }
                    let sign = sign_of(new);
                    if sign != signs[k] {
                        signs[k] = sign;
                        signs_changed = true;
                    }
                }
                if max_step < config.inner_tol {
                    break;
                }
                // Once the signed support settles, the lasso solution solves a
                // linear system on the active set; try it instead of crawling there.
                if signs_changed {
                    polish_failed = false;
                } else if !polish_failed {
                    if polish_column(
                        &w,
                        s_mat,
                        lambda,
                        j,
                        &signs,
                        &mut beta,
                        &mut r,
                        config.inner_tol,
                    ) {
                        break;
                    }
                    polish_failed = true;
                }
            }
            for k in 0..p {
                if k == j {
                    continue;
                }
                total_change += (r[k] - w[(k, j)]).abs();
                w[(k, j)] = r[k];
                w[(j, k)] = r[k];
            }
        }
        let mean_change = if p > 1 {
            total_change / (p * (p - 1)) as f64
        } else {
            0.0
        };

        let theta = assemble_precision(&w, &beta);
        if config.record_objective {
            let obj = objective_value(&theta, s_mat, lambda, config.penalize_diagonal)
                .unwrap_or(f64::NEG_INFINITY);
            objective_trace.push(obj);
            let dual = cholesky(&SymMatrix::symmetrize(w.clone()))
                .map(|c| c.log_det())
                .unwrap_or(f64::NEG_INFINITY);
            dual_trace.push(dual);
        }
        if mean_change <= stop_change {
            if let Ok(res) = kkt_residual_raw(&theta, s_mat, lambda, config.penalize_diagonal) {
                kkt = res;
                if res <= config.kkt_tol {
                    converged = true;
                }
            }
        }
        precision = Some(theta);
    }

    let theta = match precision {
        Some(t) => t,
        None => {
            // p == 1 or max_iter == 0
            let t = assemble_precision(&w, &beta);
            kkt = kkt_residual_raw(&t, s_mat, lambda, config.penalize_diagonal)
                .unwrap_or(f64::INFINITY);
            converged = kkt <= config.kkt_tol;
            t
        }
    };
    if !converged {
        log::warn!("glasso did not converge in {sweeps} sweeps (kkt residual {kkt:e})");
    }
    let precision = SparsePrecision::new(theta)?;
    Ok(GlassoFit {
        precision,
        converged,
        sweeps,
        kkt_residual: kkt,
        objective_trace,
        dual_trace,
    })
}

fn sign_of(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Solves column `j`'s lasso exactly on the signed support `signs`, keeping the
/// result only if it is sign-consistent and satisfies the inactive subgradient
/// bounds. On success `beta` column `j` and `r = Vβ` are overwritten.
#[allow(clippy::too_many_arguments)]
fn polish_column(
    w: &DMatrix<f64>,
    s: &DMatrix<f64>,
    lambda: f64,
    j: usize,
    signs: &[i8],
    beta: &mut DMatrix<f64>,
    r: &mut [f64],
    tol: f64,
) -> bool {
    let p = w.nrows();
    let active: Vec<usize> = (0..p).filter(|&k| k != j && signs[k] != 0).collect();
    if active.is_empty() {
        return false;
    }
    let m = active.len();
    let v = DMatrix::from_fn(m, m, |a, b| w[(active[a], active[b])]);
    let Ok(chol) = cholesky(&SymMatrix::symmetrize(v)) else {
        return false;
    };
    let rhs = DVector::from_fn(m, |a, _| {
        s[(active[a], j)] - lambda * signs[active[a]] as f64
    });
    let sol = chol.solve_vec(&rhs);
    if active
        .iter()
        .zip(sol.iter())
        .any(|(&k, &b)| sign_of(b) != signs[k])
    {
        return false;
    }
    let mut new_r = vec![0.0; p];
    for (&k, &b) in active.iter().zip(sol.iter()) {
        for l in 0..p {
            new_r[l] += w[(l, k)] * b;
        }
    }
    let slack = lambda + tol;
    if (0..p).any(|k| k != j && signs[k] == 0 && (s[(k, j)] - new_r[k]).abs() > slack) {
        return false;
    }
    for (&k, &b) in active.iter().zip(sol.iter()) {
        beta[(k, j)] = b;
    }
    r.copy_from_slice(&new_r);
    true
}

fn assemble_precision(w: &DMatrix<f64>, beta: &DMatrix<f64>) -> SymMatrix {
    let p = w.nrows();
    let mut theta = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        let mut quad = 0.0;
        for k in 0..p {
            if k != j {
                quad += w[(k, j)] * beta[(k, j)];
            }
        }
        let tjj = 1.0 / (w[(j, j)] - quad);
        theta[(j, j)] = tjj;
        for k in 0..p {
            if k != j {
                theta[(k, j)] = -beta[(k, j)] * tjj;
            }
        }
    }
    SymMatrix::symmetrize(theta)
}

fn objective_value(
    theta: &SymMatrix,
    s: &DMatrix<f64>,
    lambda: f64,
    penalize_diagonal: bool,
) -> Result<f64> {
    let chol = cholesky(theta)?;
    let m = theta.as_matrix();
    let tr = s.component_mul(m).sum();
    let mut pen = offdiag_l1(m);
    if penalize_diagonal {
        pen += m.diagonal().abs().sum();
    }
    Ok(chol.log_det() - tr - lambda * pen)
}

/// `ln|Λ| − tr(S Λ) − λ ‖Λ‖₁,off`, the per-sample penalized log-likelihood.
pub fn glasso_objective(
    precision: &SparsePrecision,
    empirical_cov: &SymMatrix,
    lambda: f64,
) -> Result<f64> {
    glasso_objective_with(precision, empirical_cov, lambda, false)
}

pub fn glasso_objective_with(
    precision: &SparsePrecision,
    empirical_cov: &SymMatrix,
    lambda: f64,
    penalize_diagonal: bool,
) -> Result<f64> {
    if precision.dim() != empirical_cov.dim() {
        return Err(RcaError::invalid("glasso_objective: dimension mismatch"));
    }
    objective_value(
        precision.entries(),
        empirical_cov.as_matrix(),
        lambda,
        penalize_diagonal,
    )
}

fn kkt_residual_raw(
    theta: &SymMatrix,
    s: &DMatrix<f64>,
    lambda: f64,
    penalize_diagonal: bool,
) -> Result<f64> {
    let cov = cholesky(theta)?.inverse();
    let w = cov.as_matrix();
    let t = theta.as_matrix();
    let p = t.nrows();
    let mut worst = 0.0f64;
    for j in 0..p {
        for i in 0..p {
            let g = w[(i, j)] - s[(i, j)];
            let res = if i == j {
                let target = if penalize_diagonal { lambda } else { 0.0 };
                (g - target).abs()
            } else if t[(i, j)].abs() <= ZERO_THRESHOLD {
                (g.abs() - lambda).max(0.0)
            } else {
                (g - lambda * t[(i, j)].signum()).abs()
            };
            worst = worst.max(res);
        }
    }
    Ok(worst)
}

/// Largest violation of the stationarity conditions
/// `[Λ⁻¹]_ij − S_ij ∈ λ ∂|Λ_ij|` (off-diagonal) and `[Λ⁻¹]_ii = S_ii` (diagonal).
pub fn kkt_residual(
    precision: &SparsePrecision,
    empirical_cov: &SymMatrix,
    lambda: f64,
    penalize_diagonal: bool,
) -> Result<f64> {
    if precision.dim() != empirical_cov.dim() {
        return Err(RcaError::invalid("kkt_residual: dimension mismatch"));
    }
    kkt_residual_raw(
        precision.entries(),
        empirical_cov.as_matrix(),
        lambda,
        penalize_diagonal,
    )
}

/// Smallest `λ` for which the solution is diagonal: `max_{i≠j} |S_ij|`.
pub fn lambda_max(empirical_cov: &SymMatrix) -> f64 {
    let m = empirical_cov.as_matrix();
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..j {
            best = best.max(m[(i, j)].abs());
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_cov(n: usize, p: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix = DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                1.0
            } else {
                rng.random_range(-0.3..0.3)
            }
        });
        let z = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0f64..1.0) * 3f64.sqrt());
        let y = z * mix;
        SymMatrix::gram(&y, 1.0 / n as f64)
    }

    #[test]
    fn full_shrinkage_gives_diagonal_mle() {
        let s = sample_cov(40, 6, 1);
        let fit = glasso_fit(&s, lambda_max(&s) * 1.01, &GlassoConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.precision.support().is_empty());
        for i in 0..6 {
            assert_abs_diff_eq!(
                fit.precision.entries()[(i, i)],
                1.0 / s[(i, i)],
                epsilon = 1e-12
            );
            for j in 0..6 {
                if i != j {
                    assert_eq!(fit.precision.entries()[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_penalty_inverts() {
        let s = sample_cov(60, 5, 2);
        let fit = glasso_fit(&s, 0.0, &GlassoConfig::default()).unwrap();
        assert!(fit.converged);
        let inv = cholesky(&s).unwrap().inverse();
        assert!((fit.precision.entries().as_matrix() - inv.as_matrix()).amax() < 1e-6);
    }

    #[test]
    fn two_by_two_soft_threshold() {
        for &(sv, lambda) in &[(0.6, 0.2), (-0.5, 0.1), (0.3, 0.29)] {
            let s = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, sv, sv, 1.0])).unwrap();
            let fit = glasso_fit(&s, lambda, &GlassoConfig::default()).unwrap();
            let w12 = sv - lambda * f64::signum(sv);
            let det = 1.0 - w12 * w12;
            let expected =
                DMatrix::from_row_slice(2, 2, &[1.0 / det, -w12 / det, -w12 / det, 1.0 / det]);
            assert!((fit.precision.entries().as_matrix() - expected).amax() < 1e-8);
        }
    }

    #[test]
    fn objective_examples() {
        let i4 = SparsePrecision::identity(4);
        let s = SymMatrix::identity(4);
        assert_abs_diff_eq!(
            glasso_objective(&i4, &s, 0.0).unwrap(),
            -4.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            glasso_objective(&i4, &s, 1.0).unwrap(),
            -4.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn rejects_negative_lambda() {
        let s = SymMatrix::identity(3);
        assert!(matches!(
            glasso_fit(&s, -1.0, &GlassoConfig::default()),
            Err(RcaError::InvalidInput(_))
        ));
    }

    #[test]
    fn nonconvergence_is_flagged() {
        let s = sample_cov(30, 8, 4);
        let cfg = GlassoConfig {
            max_iter: 1,
            ..GlassoConfig::default()
        };
        let fit = glasso_fit(&s, 0.01, &cfg).unwrap();
        assert!(!fit.converged);
        assert!(matches!(
            fit.into_result(),
            Err(RcaError::NoConvergence { .. })
        ));
    }

    #[test]
    fn singular_covariance_gets_ridge() {
        // n < p gives a rank-deficient sample covariance
        let s = sample_cov(3, 6, 5);
        assert!(cholesky(&s).is_err());
        let fit = glasso_fit(&s, 0.05, &GlassoConfig::default()).unwrap();
        assert!(fit.converged, "kkt {}", fit.kkt_residual);
    }

    #[test]
    fn warm_start_reaches_same_solution() {
        let s = sample_cov(50, 10, 6);
        let cold = glasso_fit(&s, 0.05, &GlassoConfig::default()).unwrap();
        let near = glasso_fit(&s, 0.08, &GlassoConfig::default()).unwrap();
        let warm =
            glasso_fit_warm(&s, 0.05, &GlassoConfig::default(), Some(&near.precision)).unwrap();
        assert!(warm.converged);
        assert!(
            (cold.precision.entries().as_matrix() - warm.precision.entries().as_matrix()).amax()
                < 1e-5
        );
    }

    #[test]
    fn penalized_diagonal_variant() {
        let s = sample_cov(50, 5, 7);
        let cfg = GlassoConfig {
            penalize_diagonal: true,
            ..GlassoConfig::default()
        };
        let fit = glasso_fit(&s, 0.1, &cfg).unwrap();
        assert!(fit.converged);
        let cov = fit.precision.covariance().unwrap();
        for i in 0..5 {
            assert_abs_diff_eq!(cov[(i, i)], s[(i, i)] + 0.1, epsilon = 1e-6);
        }
    }
}
