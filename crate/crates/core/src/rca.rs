//! Maximum-likelihood residual component analysis.
//!
//! Given a positive-definite covariance `Σ` that already explains part of the
//! data, the low-rank term of `X Xᵀ + Σ` is recovered from the generalized
//! eigenproblem `C S = Σ S D` on the second-moment matrix `C`. Retained
//! columns are those with `d_i > 1`, and the loadings are `Σ S (D − I)^{1/2}`.
//! The rotation is fixed to the identity.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{RcaError, Result};
use crate::linalg::{cholesky, gep_sym, scale_columns, sym_eig, SymMatrix};

/// Generalized eigenvalues must exceed `1 + RANK_TOL` to be retained.
pub const RANK_TOL: f64 = 1e-8;

/// Which axis the Gaussian is independent over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Covariance between features; independent over data points; solves for `W`.
    Primal,
    /// Covariance between data points; independent over features; solves for `X`.
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankChoice {
    /// Keep every column with `d_i > 1`.
    #[default]
    Auto,
    /// Keep exactly this many columns; fails if fewer exceed one.
    Exactly(usize),
    /// Keep the automatic count, truncated to this many.
    AtMost(usize),
}

impl From<Option<usize>> for RankChoice {
    fn from(rank: Option<usize>) -> Self {
        rank.map_or(RankChoice::Auto, RankChoice::Exactly)
    }
}

#[derive(Debug, Clone)]
pub struct RcaSolution {
    /// `X` (dual) or `W` (primal), `dim × q`.
    pub loadings: DMatrix<f64>,
    /// Retained generalized eigenvalues, descending, all `> 1`.
    pub retained_values: DVector<f64>,
    /// Retained generalized eigenvectors (columns of `S`), `dim × q`.
    pub basis: DMatrix<f64>,
    /// Full generalized spectrum, descending.
    pub all_values: DVector<f64>,
    pub role: Role,
}

impl RcaSolution {
    pub fn rank(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn dim(&self) -> usize {
        self.loadings.nrows()
    }
}

/// `(1/n) YᵀY` for the primal role or `(1/p) YYᵀ` for the dual role.
pub fn second_moment(data: &DMatrix<f64>, role: Role) -> SymMatrix {
    match role {
        Role::Primal => SymMatrix::gram(data, 1.0 / data.nrows() as f64),
        Role::Dual => SymMatrix::gram(&data.transpose(), 1.0 / data.ncols() as f64),
    }
}

/// Number of values strictly above `1 + RANK_TOL`.
pub fn select_rank(values: &[f64]) -> usize {
    values.iter().filter(|&&d| d > 1.0 + RANK_TOL).count()
}

pub fn rca_fit(
    second_moment: &SymMatrix,
    sigma: &SymMatrix,
    rank: RankChoice,
    role: Role,
) -> Result<RcaSolution> {
    if second_moment.dim() != sigma.dim() {
        return Err(RcaError::invalid(format!(
            "rca_fit: second moment is {}x{} but sigma is {}x{}",
            second_moment.dim(),
            second_moment.dim(),
            sigma.dim(),
            sigma.dim()
        )));
    }
    let gep = gep_sym(second_moment, sigma)?;
    let available = select_rank(gep.values.as_slice());
    let q = match rank {
        RankChoice::Auto => available,
        RankChoice::AtMost(cap) => available.min(cap),
        RankChoice::Exactly(0) => {
            return Err(RcaError::invalid(
                "rca_fit: requested rank must be positive",
            ))
        }
        RankChoice::Exactly(q) if q > available => {
            return Err(RcaError::RankUnavailable {
                requested: q,
                available,
            })
        }
        RankChoice::Exactly(q) => q,
    };

    let basis = gep.vectors.columns(0, q).into_owned();
    let retained_values = DVector::from_iterator(q, gep.values.iter().take(q).copied());
    let lengths: Vec<f64> = retained_values.iter().map(|d| (d - 1.0).sqrt()).collect();
    let loadings = scale_columns(&(sigma.as_matrix() * &basis), &lengths);

    Ok(RcaSolution {
        loadings,
        retained_values,
        basis,
        all_values: gep.values,
        role,
    })
}

/// Closed-form probabilistic PCA: `U_q (Λ_q − σ² I)^{1/2}` over the eigenvalues above `σ²`.
#[derive(Debug, Clone)]
pub struct PpcaSolution {
    pub loadings: DMatrix<f64>,
    pub retained_eigenvalues: DVector<f64>,
    pub noise_var: f64,
}

pub fn ppca_fit(
    second_moment: &SymMatrix,
    noise_var: f64,
    rank: RankChoice,
) -> Result<PpcaSolution> {
    if !(noise_var > 0.0) {
        return Err(RcaError::invalid(
            "ppca_fit: noise variance must be positive",
        ));
    }
    let eig = sym_eig(second_moment)?;
    let available = eig
        .values
        .iter()
        .filter(|&&l| l / noise_var > 1.0 + RANK_TOL)
        .count();
    let q = match rank {
        RankChoice::Auto => available,
        RankChoice::AtMost(cap) => available.min(cap),
        RankChoice::Exactly(0) => return Err(RcaError::invalid("ppca_fit: rank must be positive")),
        RankChoice::Exactly(q) if q > available => {
            return Err(RcaError::RankUnavailable {
                requested: q,
                available,
            })
        }
        RankChoice::Exactly(q) => q,
    };
    let retained = DVector::from_iterator(q, eig.values.iter().take(q).copied());
    let lengths: Vec<f64> = retained.iter().map(|l| (l - noise_var).sqrt()).collect();
    let loadings = scale_columns(&eig.vectors.columns(0, q).into_owned(), &lengths);
    Ok(PpcaSolution {
        loadings,
        retained_eigenvalues: retained,
        noise_var,
    })
}

/// Exact Gaussian log-likelihood with covariance `K = loadings·loadingsᵀ + Σ`.
///
/// In the dual role `K` is `n × n` and the columns of `data` are the
/// independent draws; in the primal role `K` is `p × p` and the rows are.
pub fn rca_loglik(
    data: &DMatrix<f64>,
    loadings: &DMatrix<f64>,
    sigma: &SymMatrix,
    role: Role,
) -> Result<f64> {
    let draws = match role {
        Role::Dual => data.clone(),
        Role::Primal => data.transpose(),
    };
    let dim = draws.nrows();
    if sigma.dim() != dim || loadings.nrows() != dim {
        return Err(RcaError::invalid(format!(
            "rca_loglik: covariance dimension {} / loadings {} do not match {}",
            sigma.dim(),
            loadings.nrows(),
            dim
        )));
    }
    let k = SymMatrix::symmetrize(loadings * loadings.transpose() + sigma.as_matrix());
    gaussian_loglik_columns(&draws, &k)
}

/// `Σ_j log N(m_{:,j} | 0, K)` over the columns of `m`.
pub fn gaussian_loglik_columns(m: &DMatrix<f64>, k: &SymMatrix) -> Result<f64> {
    let chol = cholesky(k)?;
    let count = m.ncols() as f64;
    let dim = m.nrows() as f64;
    Ok(-0.5 * count * chol.log_det()
        - 0.5 * chol.quad_form_trace(m)
        - 0.5 * count * dim * (2.0 * PI).ln())
}

#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub covariance: SymMatrix,
}

/// Posterior over the latent point given an observation, primal role only.
pub fn rca_posterior(
    y: &DVector<f64>,
    solution: &RcaSolution,
    sigma: &SymMatrix,
) -> Result<GaussianPosterior> {
    if solution.role != Role::Primal {
        return Err(RcaError::invalid(
            "rca_posterior: the posterior is defined for the primal role only",
        ));
    }
    posterior_from_loadings(y, &solution.loadings, sigma)
}

/// `x | y ~ N(Σ_{x|y} Wᵀ Σ⁻¹ y, Σ_{x|y})` with `Σ_{x|y} = (Wᵀ Σ⁻¹ W + I)⁻¹`.
pub fn posterior_from_loadings(
    y: &DVector<f64>,
    w: &DMatrix<f64>,
    sigma: &SymMatrix,
) -> Result<GaussianPosterior> {
    let p = sigma.dim();
    if y.len() != p || w.nrows() != p {
        return Err(RcaError::invalid(format!(
            "rca_posterior: observation {} / loadings {} do not match sigma {}",
            y.len(),
            w.nrows(),
            p
        )));
    }
    let q = w.ncols();
    let sigma_chol = cholesky(sigma)?;
    let sinv_w = sigma_chol.solve(w);
    let precision = SymMatrix::symmetrize(w.tr_mul(&sinv_w) + DMatrix::identity(q, q));
    if q == 0 {
        return Ok(GaussianPosterior {
            mean: DVector::zeros(0),
            covariance: SymMatrix::symmetrize(DMatrix::zeros(0, 0)),
        });
    }
    let post_chol = cholesky(&precision)?;
    let covariance = post_chol.inverse();
    let mean = covariance.as_matrix() * (sinv_w.tr_mul(y));
    Ok(GaussianPosterior { mean, covariance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn select_rank_examples() {
        assert_eq!(select_rank(&[3.0, 1.5, 0.9]), 2);
        assert_eq!(select_rank(&[1.0, 0.7, 0.1]), 0);
        assert_eq!(select_rank(&[1.0 + 5e-9, 0.5]), 0);
        assert_eq!(select_rank(&[1.0 + 2e-8, 0.5]), 1);
        assert_eq!(select_rank(&[]), 0);
    }

    #[test]
    fn fully_explained_residual_is_empty() {
        let c = SymMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[2.0, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 1.0],
        ))
        .unwrap();
        let sol = rca_fit(&c, &c, RankChoice::Auto, Role::Dual).unwrap();
        assert_eq!(sol.rank(), 0);
        assert_eq!(sol.loadings.shape(), (3, 0));
        for d in sol.all_values.iter() {
            assert_abs_diff_eq!(*d, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rank_requests() {
        let c = SymMatrix::from_diagonal(&[4.0, 2.0, 0.5]);
        let i = SymMatrix::identity(3);
        assert_eq!(
            rca_fit(&c, &i, RankChoice::Exactly(1), Role::Primal)
                .unwrap()
                .rank(),
            1
        );
        assert_eq!(
            rca_fit(&c, &i, RankChoice::AtMost(5), Role::Primal)
                .unwrap()
                .rank(),
            2
        );
        assert!(matches!(
            rca_fit(&c, &i, RankChoice::Exactly(3), Role::Primal),
            Err(RcaError::RankUnavailable {
                requested: 3,
                available: 2
            })
        ));
        assert!(matches!(
            rca_fit(&c, &SymMatrix::identity(2), RankChoice::Auto, Role::Primal),
            Err(RcaError::InvalidInput(_))
        ));
    }

    #[test]
    fn loadings_follow_the_closed_form() {
        let c = SymMatrix::from_diagonal(&[5.0, 2.0, 0.5]);
        let sigma = SymMatrix::from_diagonal(&[1.0, 0.5, 1.0]);
        let sol = rca_fit(&c, &sigma, RankChoice::Auto, Role::Primal).unwrap();
        // d = (5, 4, 0.5) for this diagonal pair
        assert_eq!(sol.rank(), 2);
        assert_abs_diff_eq!(sol.retained_values[0], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.retained_values[1], 4.0, epsilon = 1e-12);
        let ww = &sol.loadings * sol.loadings.transpose();
        // W Wᵀ = C − Σ on the retained axes
        assert_abs_diff_eq!(ww[(0, 0)], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ww[(1, 1)], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(ww[(2, 2)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn loglik_standard_normal_at_zero() {
        let y = DMatrix::zeros(1, 1);
        let ll = rca_loglik(
            &y,
            &DMatrix::zeros(1, 0),
            &SymMatrix::identity(1),
            Role::Dual,
        )
        .unwrap();
        assert_abs_diff_eq!(ll, -0.5 * (2.0 * PI).ln(), epsilon = 1e-15);
    }

    #[test]
    fn loglik_rejects_non_pd() {
        let y = DMatrix::zeros(2, 3);
        let sigma = SymMatrix::from_diagonal(&[1.0, -2.0]);
        assert!(matches!(
            rca_loglik(&y, &DMatrix::zeros(2, 0), &sigma, Role::Dual),
            Err(RcaError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn posterior_prior_recovery() {
        let y = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let w = DMatrix::zeros(3, 2);
        let post = posterior_from_loadings(&y, &w, &SymMatrix::identity(3)).unwrap();
        assert_eq!(post.mean, DVector::zeros(2));
        assert!((post.covariance.as_matrix() - DMatrix::<f64>::identity(2, 2)).norm() < 1e-15);
    }

    #[test]
    fn posterior_at_zero_observation() {
        let w = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 0.5]);
        let sigma = SymMatrix::from_diagonal(&[1.0, 2.0, 0.5]);
        let post = posterior_from_loadings(&DVector::zeros(3), &w, &sigma).unwrap();
        assert_eq!(post.mean[0], 0.0);
        // Wᵀ Σ⁻¹ W = 1 + 2 + 0.5
        assert_abs_diff_eq!(post.covariance[(0, 0)], 1.0 / 4.5, epsilon = 1e-14);
    }

    #[test]
    fn posterior_requires_primal_and_matching_dims() {
        let c = SymMatrix::from_diagonal(&[4.0, 2.0]);
        let sol = rca_fit(&c, &SymMatrix::identity(2), RankChoice::Auto, Role::Dual).unwrap();
        assert!(rca_posterior(&DVector::zeros(2), &sol, &SymMatrix::identity(2)).is_err());
        let sol = rca_fit(&c, &SymMatrix::identity(2), RankChoice::Auto, Role::Primal).unwrap();
        assert!(rca_posterior(&DVector::zeros(3), &sol, &SymMatrix::identity(2)).is_err());
    }

    #[test]
    fn ppca_matches_isotropic_rca_on_a_diagonal_moment() {
        let c = SymMatrix::from_diagonal(&[6.0, 3.0, 1.0, 0.5]);
        let ppca = ppca_fit(&c, 2.0, RankChoice::Auto).unwrap();
        assert_eq!(ppca.loadings.ncols(), 2);
        let rca = rca_fit(
            &c,
            &SymMatrix::scaled_identity(4, 2.0),
            RankChoice::Auto,
            Role::Primal,
        )
        .unwrap();
        assert!((ppca.loadings - rca.loadings).norm() < 1e-12);
    }
}
