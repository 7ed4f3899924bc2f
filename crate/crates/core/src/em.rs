//! EM/RCA: alternating estimation of a low-rank factor `W` and a sparse
//! precision `Λ` for the model
//!
//! ```text
//! y | x, z ~ N(W x + z, σ² I),   x ~ N(0, I),   z ~ N(0, Λ⁻¹),   p(Λ) ∝ exp(−(n/2) λ ‖Λ‖₁,off)
//! ```
//!
//! Each iteration runs an E-step for the posterior of `z`, a graphical-lasso
//! M-step for `Λ` on the averaged posterior second moment, and an RCA step
//! that refits `W` against `Σ = Λ⁻¹ + σ² I`. `σ²` is fixed at initialization.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{RcaError, Result};
use crate::glasso::{glasso_fit_warm, GlassoConfig, GlassoFit, SparsePrecision};
use crate::linalg::{cholesky, SymMatrix};
use crate::rca::{ppca_fit, rca_fit, second_moment, RankChoice, RcaSolution, Role};

#[derive(Debug, Clone)]
pub struct EmRcaState {
    pub loadings_w: DMatrix<f64>,
    pub precision: SparsePrecision,
    pub noise_var: f64,
    /// Lower bound evaluated after the most recent M-step.
    pub bound: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone)]
pub struct PosteriorMoments {
    /// `cov[z | y]`, shared by every data point.
    pub cov_z: SymMatrix,
    /// `⟨z_n | y_n⟩` as rows, `n × p`.
    pub means: DMatrix<f64>,
    /// `(1/n) Σ_n ⟨z_n z_nᵀ⟩`.
    pub second_moment_avg: SymMatrix,
}

/// `(W Wᵀ + σ² I)⁻¹`, through the Woodbury identity when `W` is thin.
fn low_rank_noise_inverse(w: &DMatrix<f64>, noise_var: f64) -> Result<SymMatrix> {
    let (p, q) = w.shape();
    if q == 0 {
        return Ok(SymMatrix::scaled_identity(p, 1.0 / noise_var));
    }
    if q < p {
        let inner = SymMatrix::symmetrize(w.tr_mul(w) + DMatrix::identity(q, q) * noise_var);
        let chol = cholesky(&inner)?;
        let correction = w * chol.solve(&w.transpose());
        let m = (DMatrix::identity(p, p) - correction) / noise_var;
        Ok(SymMatrix::symmetrize(m))
    } else {
        let a = SymMatrix::symmetrize(w * w.transpose() + DMatrix::identity(p, p) * noise_var);
        Ok(cholesky(&a)?.inverse())
    }
}

fn check_shapes(
    data: &DMatrix<f64>,
    w: &DMatrix<f64>,
    noise_var: f64,
    precision: &SparsePrecision,
) -> Result<()> {
    let p = data.ncols();
    if w.nrows() != p || precision.dim() != p {
        return Err(RcaError::invalid(format!(
            "dimension mismatch: data has {p} columns, loadings {} rows, precision {}",
            w.nrows(),
            precision.dim()
        )));
    }
    if !(noise_var > 0.0) {
        return Err(RcaError::invalid("noise variance must be positive"));
    }
    Ok(())
}

pub fn e_step(
    data: &DMatrix<f64>,
    loadings_w: &DMatrix<f64>,
    noise_var: f64,
    precision: &SparsePrecision,
) -> Result<PosteriorMoments> {
    check_shapes(data, loadings_w, noise_var, precision)?;
    let n = data.nrows() as f64;
    let a_inv = low_rank_noise_inverse(loadings_w, noise_var)?;
    let post_precision = a_inv.add(precision.entries());
    let cov_z = cholesky(&post_precision)?.inverse();
    let means = data * a_inv.as_matrix() * cov_z.as_matrix();
    let second_moment_avg = SymMatrix::symmetrize(cov_z.as_matrix() + means.tr_mul(&means) / n);
    Ok(PosteriorMoments {
        cov_z,
        means,
        second_moment_avg,
    })
}

pub fn m_step(
    moments: &PosteriorMoments,
    lambda: f64,
    config: &GlassoConfig,
    warm: Option<&SparsePrecision>,
) -> Result<GlassoFit> {
    glasso_fit_warm(&moments.second_moment_avg, lambda, config, warm)
}

/// `Σ = Λ⁻¹ + σ² I`.
pub fn residual_covariance(precision: &SparsePrecision, noise_var: f64) -> Result<SymMatrix> {
    Ok(precision.covariance()?.add_diagonal(noise_var))
}

/// RCA of `(1/n) YᵀY` against `Λ⁻¹ + σ² I` in the primal role.
pub fn rca_step(
    data: &DMatrix<f64>,
    precision: &SparsePrecision,
    noise_var: f64,
    rank: RankChoice,
) -> Result<RcaSolution> {
    if precision.dim() != data.ncols() {
        return Err(RcaError::invalid("rca_step: precision dimension mismatch"));
    }
    let sigma = residual_covariance(precision, noise_var)?;
    let c = second_moment(data, Role::Primal);
    rca_fit(&c, &sigma, rank, Role::Primal)
}

/// `E_q[log p(Y|Z)] + E_q[log p(Z|Λ)] + log p(Λ) + H[q]`, with `q` given by `moments`
/// and the Laplace prior taken as `−(n/2) λ ‖Λ‖₁,off`.
pub fn lower_bound(
    data: &DMatrix<f64>,
    loadings_w: &DMatrix<f64>,
    noise_var: f64,
    precision: &SparsePrecision,
    moments: &PosteriorMoments,
    lambda: f64,
) -> Result<f64> {
    check_shapes(data, loadings_w, noise_var, precision)?;
    let n = data.nrows() as f64;
    let p = data.ncols() as f64;
    let ln2pi = (2.0 * PI).ln();

    let a = SymMatrix::symmetrize(
        loadings_w * loadings_w.transpose()
            + DMatrix::identity(data.ncols(), data.ncols()) * noise_var,
    );
    let a_chol = cholesky(&a)?;
    let resid = (data - &moments.means).transpose();
    let a_inv_cov_trace = a_chol.solve(moments.cov_z.as_matrix()).trace();
    let expected_lik = -0.5 * n * (p * ln2pi + a_chol.log_det())
        - 0.5 * (a_chol.quad_form_trace(&resid) + n * a_inv_cov_trace);

    let lam_chol = cholesky(precision.entries())?;
    let tr_lam_s2 = precision
        .entries()
        .as_matrix()
        .component_mul(moments.second_moment_avg.as_matrix())
        .sum();
    let expected_prior = -0.5 * n * (p * ln2pi - lam_chol.log_det()) - 0.5 * n * tr_lam_s2;

    let log_prior = -0.5 * n * lambda * precision.offdiag_l1();
    let entropy = 0.5 * n * (p * (1.0 + ln2pi) + cholesky(&moments.cov_z)?.log_det());

    Ok(expected_lik + expected_prior + log_prior + entropy)
}

/// `Σ_n log N(y_n | 0, W Wᵀ + Λ⁻¹ + σ² I) − (n/2) λ ‖Λ‖₁,off`.
pub fn penalized_marginal_loglik(
    data: &DMatrix<f64>,
    loadings_w: &DMatrix<f64>,
    noise_var: f64,
    precision: &SparsePrecision,
    lambda: f64,
) -> Result<f64> {
    check_shapes(data, loadings_w, noise_var, precision)?;
    let sigma = residual_covariance(precision, noise_var)?;
    let c = second_moment(data, Role::Primal);
    marginal_from_moment(&c, data.nrows(), loadings_w, &sigma, precision, lambda)
}

/// The penalized marginal through `C = (1/n) YᵀY`: `−(n/2)(p ln 2π + ln|K| + tr(K⁻¹C)) − (n/2) λ ‖Λ‖₁,off`.
fn marginal_from_moment(
    c: &SymMatrix,
    n: usize,
    loadings_w: &DMatrix<f64>,
    sigma: &SymMatrix,
    precision: &SparsePrecision,
    lambda: f64,
) -> Result<f64> {
    let n = n as f64;
    let p = c.dim() as f64;
    let k = SymMatrix::symmetrize(loadings_w * loadings_w.transpose() + sigma.as_matrix());
    let chol = cholesky(&k)?;
    let tr = chol.solve(c.as_matrix()).trace();
    Ok(-0.5 * n * (p * (2.0 * PI).ln() + chol.log_det() + tr)
        - 0.5 * n * lambda * precision.offdiag_l1())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmRcaConfig {
    /// Relative change of the penalized marginal log-likelihood that ends the loop.
    pub tol: f64,
    pub max_iter: usize,
    pub glasso: GlassoConfig,
    /// Overrides the initialization's rank cap.
    pub rank_cap: Option<usize>,
    /// Overrides `σ² = tr(C_y) / (2p)`.
    pub noise_var: Option<f64>,
}

impl Default for EmRcaConfig {
    fn default() -> Self {
        EmRcaConfig {
            tol: 1e-6,
            max_iter: 200,
            glasso: GlassoConfig::default(),
            rank_cap: None,
            noise_var: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Penalized marginal log-likelihood after the RCA step.
    pub objective: f64,
    /// Lower bound after the M-step.
    pub bound: f64,
    pub rank: usize,
    pub noise_var: f64,
    pub glasso_converged: bool,
}

#[derive(Debug, Clone)]
pub struct EmRcaFit {
    pub state: EmRcaState,
    pub trace: Vec<IterationRecord>,
    /// Objective at the initialization, before the first iteration.
    pub initial_objective: f64,
    pub initial_rank: usize,
    pub converged: bool,
    /// Iterations whose objective dropped by more than `tol` relative to the previous one.
    pub decreases: Vec<usize>,
}

impl EmRcaFit {
    pub fn objective(&self) -> f64 {
        self.trace
            .last()
            .map_or(self.initial_objective, |r| r.objective)
    }

    pub fn into_result(self) -> Result<EmRcaFit> {
        if self.converged {
            Ok(self)
        } else {
            let last_change = match self.trace.as_slice() {
                [.., a, b] => ((b.objective - a.objective) / b.objective.abs()).abs(),
                _ => f64::NAN,
            };
            Err(RcaError::NoConvergence {
                solver: "em_rca",
                iterations: self.trace.len(),
                last_change,
            })
        }
    }
}

/// `σ² = tr(C_y)/(2p)` and PPCA loadings over the eigenvalues of `C_y` above `σ²`.
pub fn initialize(data: &DMatrix<f64>, noise_var: Option<f64>) -> Result<(f64, DMatrix<f64>)> {
    let c = second_moment(data, Role::Primal);
    let noise_var = noise_var.unwrap_or_else(|| c.trace() / (2.0 * c.dim() as f64));
    let ppca = ppca_fit(&c, noise_var, RankChoice::Auto)?;
    Ok((noise_var, ppca.loadings))
}

pub fn em_rca_fit(data: &DMatrix<f64>, lambda: f64, config: &EmRcaConfig) -> Result<EmRcaFit> {
    let (n, p) = data.shape();
    if n == 0 || p < 2 {
        return Err(RcaError::invalid(format!(
            "em_rca needs at least one point and two features, got {n}x{p}"
        )));
    }
    if !(lambda >= 0.0) {
        return Err(RcaError::invalid("lambda must be non-negative"));
    }
    let (noise_var, mut w) = initialize(data, config.noise_var)?;
    let initial_rank = w.ncols();
    let cap = config.rank_cap.unwrap_or(initial_rank);
    if w.ncols() > cap {
        w = w.columns(0, cap).into_owned();
    }
    let mut precision = SparsePrecision::identity(p);
    let c = second_moment(data, Role::Primal);
    let initial_objective = penalized_marginal_loglik(data, &w, noise_var, &precision, lambda)?;

    let mut prev = initial_objective;
    let mut trace = Vec::new();
    let mut decreases = Vec::new();
    let mut converged = false;
    let mut bound = f64::NAN;

    for iteration in 1..=config.max_iter {
        let moments = e_step(data, &w, noise_var, &precision)?;
        let fit = m_step(&moments, lambda, &config.glasso, Some(&precision))?;
        precision = fit.precision;
        bound = lower_bound(data, &w, noise_var, &precision, &moments, lambda)?;
        let sigma = residual_covariance(&precision, noise_var)?;
        w = rca_fit(&c, &sigma, RankChoice::AtMost(cap), Role::Primal)?.loadings;

        let objective = marginal_from_moment(&c, n, &w, &sigma, &precision, lambda)?;
        let rel = (objective - prev) / objective.abs().max(f64::MIN_POSITIVE);
        if rel < -config.tol {
            log::warn!("em_rca objective decreased at iteration {iteration} (relative {rel:e})");
            decreases.push(iteration);
        }
        trace.push(IterationRecord {
            iteration,
            objective,
            bound,
            rank: w.ncols(),
            noise_var,
            glasso_converged: fit.converged,
        });
        prev = objective;
        if rel.abs() < config.tol {
            converged = true;
            break;
        }
    }

    Ok(EmRcaFit {
        state: EmRcaState {
            loadings_w: w,
            precision,
            noise_var,
            bound,
            iteration: trace.len(),
        },
        trace,
        initial_objective,
        initial_rank,
        converged,
        decreases,
    })
}
