//! Seeded synthetic data.
//!
//! [`gen_confounded`] draws `Y = X Wᵀ + Z + E` with rows of `Z` from a sparse
//! Gaussian Markov random field, a planted low-rank confounder `X Wᵀ`, and
//! isotropic noise. [`gen_two_group_series`] draws treatment/control time
//! series sharing a smooth profile, with a planted subset of features whose
//! treatment arm deviates.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::edge::{all_edges, universe_size};
use crate::error::{RcaError, Result};
use crate::glasso::SparsePrecision;
use crate::kernels::{gram_matrix, Group, SquaredExponential, TimeGrid};
use crate::linalg::{cholesky, sym_eig, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    /// Fraction of the `p(p−1)/2` possible edges present in the precision.
    pub sparsity: f64,
    pub entry_mean: f64,
    pub entry_variance: f64,
    /// Structured variance over noise variance; `None` means noiseless.
    pub snr: Option<f64>,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            n: 100,
            p: 50,
            q: 3,
            sparsity: 0.01,
            entry_mean: 1.0,
            entry_variance: 2.0,
            snr: Some(10.0),
            seed: 1,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p < 2 {
            return Err(RcaError::invalid("simulation needs n >= 1 and p >= 2"));
        }
        if !(self.sparsity >= 0.0 && self.sparsity < 1.0) {
            return Err(RcaError::invalid(format!(
                "sparsity must lie in [0, 1), got {}",
                self.sparsity
            )));
        }
        if !(self.entry_variance >= 0.0) {
            return Err(RcaError::invalid("entry variance must be non-negative"));
        }
        if let Some(snr) = self.snr {
            if !(snr > 0.0) {
                return Err(RcaError::invalid(format!(
                    "snr must be positive, got {snr}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimInstance {
    pub spec: SimSpec,
    pub data: DMatrix<f64>,
    pub truth_precision: SparsePrecision,
    pub truth_loadings: DMatrix<f64>,
    pub truth_latents: DMatrix<f64>,
    pub noise_var: f64,
}

/// Number of planted edges for `p` nodes at the given sparsity.
pub fn edge_count(p: usize, sparsity: f64) -> usize {
    (sparsity * universe_size(p) as f64).round() as usize
}

pub fn gen_sparse_precision(p: usize, sparsity: f64, seed: u64) -> Result<SparsePrecision> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sparse_precision_with(p, sparsity, 1.0, 2.0, &mut rng)
}

/// Uniform support, `N(mean, variance)` off-diagonal values on a unit diagonal,
/// repaired to positive definite by `δ I` with `δ = max(0, −λ_min) + 0.1·mean|diag|`.
fn sparse_precision_with(
    p: usize,
    sparsity: f64,
    mean: f64,
    variance: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SparsePrecision> {
    let count = edge_count(p, sparsity);
    let universe: Vec<_> = all_edges(p).collect();
    let mut chosen = index::sample(rng, universe.len(), count).into_vec();
    chosen.sort_unstable();
    let dist = Normal::new(mean, variance.sqrt())
        .map_err(|e| RcaError::invalid(format!("bad entry distribution: {e}")))?;

    let mut raw = DMatrix::<f64>::identity(p, p);
    for k in chosen {
        let e = universe[k];
        let mut v: f64 = dist.sample(rng);
        // an exact zero would drop the edge from the support
        while v.abs() <= 1e-6 {
            v = dist.sample(rng);
        }
        raw[(e.0, e.1)] = v;
        raw[(e.1, e.0)] = v;
    }
    let raw = SymMatrix::symmetrize(raw);
    let eig = sym_eig(&raw)?;
    let lambda_min = eig.values[p - 1];
    let mean_abs_diag = raw.as_matrix().diagonal().abs().mean();
    let delta = (-lambda_min).max(0.0) + 0.1 * mean_abs_diag;
    SparsePrecision::new(raw.add_diagonal(delta))
}

fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // filled row by row so the draw order does not depend on storage layout
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

pub fn gen_confounded(spec: &SimSpec) -> Result<SimInstance> {
    spec.validate()?;
    let (n, p, q) = (spec.n, spec.p, spec.q);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let precision = sparse_precision_with(
        p,
        spec.sparsity,
        spec.entry_mean,
        spec.entry_variance,
        &mut rng,
    )?;
    let cov_z = precision.covariance()?;
    let chol_z = cholesky(&cov_z)?;
    let z = standard_normal_matrix(n, p, &mut rng) * chol_z.l().transpose();

    let latents = standard_normal_matrix(n, q, &mut rng);
    let mut loadings = standard_normal_matrix(p, q, &mut rng);
    let z_var = cov_z.trace();
    if q > 0 {
        // E[tr(W x xᵀ Wᵀ)] = tr(W Wᵀ) matches tr(Λ⁻¹)
        let scale = (z_var / loadings.norm_squared()).sqrt();
        loadings *= scale;
    }
    let low_rank_var = loadings.norm_squared();
    let signal = &latents * loadings.transpose() + z;

    let (noise_var, data) = match spec.snr {
        None => (0.0, signal),
        Some(snr) => {
            let noise_var = (low_rank_var + z_var) / (p as f64 * snr);
            let e = standard_normal_matrix(n, p, &mut rng) * noise_var.sqrt();
            (noise_var, signal + e)
        }
    };

    Ok(SimInstance {
        spec: spec.clone(),
        data,
        truth_precision: precision,
        truth_loadings: loadings,
        truth_latents: latents,
        noise_var,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeriesSpec {
    pub features: usize,
    /// Number of features whose treatment arm carries an extra smooth deviation.
    pub differential: usize,
    pub lengthscale: f64,
    /// Standard deviation of the shared profile.
    pub amplitude: f64,
    /// Standard deviation of the treatment-only deviation.
    pub diff_amplitude: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SeriesSpec {
    fn default() -> Self {
        SeriesSpec {
            features: 500,
            differential: 40,
            lengthscale: 20.0,
            amplitude: 1.0,
            diff_amplitude: 1.0,
            noise_sd: 0.05,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeriesInstance {
    pub grid: TimeGrid,
    /// Time points × features.
    pub data: DMatrix<f64>,
    /// `true` for planted differential features.
    pub labels: Vec<bool>,
}

/// Two-group time series on `grid`: both arms share profile `f_j`; planted features add `g_j` to the treatment arm.
pub fn gen_two_group_series(spec: &SeriesSpec, grid: &TimeGrid) -> Result<SeriesInstance> {
    if spec.differential > spec.features {
        return Err(RcaError::invalid(
            "more differential features than features",
        ));
    }
    if !(spec.lengthscale > 0.0) {
        return Err(RcaError::invalid("lengthscale must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut distinct: Vec<f64> = grid.times().to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let d = distinct.len();
    let unique_grid = TimeGrid::new(distinct.clone(), vec![Group::Control; d])?;
    let kernel = SquaredExponential {
        lengthscale: spec.lengthscale,
    };
    let k = gram_matrix(&unique_grid, &kernel, 1e-10);
    let l = cholesky(&k)?.into_l();
    let slot: Vec<usize> = grid
        .times()
        .iter()
        .map(|t| {
            distinct
                .iter()
                .position(|u| u == t)
                .expect("time is in the grid")
        })
        .collect();

    let mut labels = vec![false; spec.features];
    for k in index::sample(&mut rng, spec.features, spec.differential) {
        labels[k] = true;
    }

    let n = grid.len();
    let mut data = DMatrix::zeros(n, spec.features);
    for j in 0..spec.features {
        let f = &l * standard_normal_matrix(d, 1, &mut rng) * spec.amplitude;
        let g = &l * standard_normal_matrix(d, 1, &mut rng) * spec.diff_amplitude;
        for i in 0..n {
            let mut v = f[slot[i]];
            if labels[j] && grid.groups()[i] == Group::Treatment {
                v += g[slot[i]];
            }
            let eps: f64 = StandardNormal.sample(&mut rng);
            data[(i, j)] = v + spec.noise_sd * eps;
        }
    }
    Ok(SeriesInstance {
        grid: grid.clone(),
        data,
        labels,
    })
}
