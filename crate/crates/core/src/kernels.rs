//! Gram matrices over treatment/control time grids and residual scoring of
//! features against a shared temporal covariance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{RcaError, Result};
use crate::linalg::SymMatrix;
use crate::rca::{rca_fit, second_moment, RankChoice, Role};

/// Treatment time points of the reference two-group design (minutes).
pub const TREATMENT_TIMES: [f64; 13] = [
    0.0, 20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0, 180.0, 200.0, 220.0, 240.0,
];
/// Control time points of the reference two-group design (minutes).
pub const CONTROL_TIMES: [f64; 7] = [0.0, 20.0, 40.0, 60.0, 120.0, 180.0, 240.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Control,
    Treatment,
}

impl std::str::FromStr for Group {
    type Err = RcaError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "control" => Ok(Group::Control),
            "treatment" => Ok(Group::Treatment),
            other => Err(RcaError::invalid(format!("unknown group label '{other}'"))),
        }
    }
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Group::Control => "control",
            Group::Treatment => "treatment",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    groups: Vec<Group>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>, groups: Vec<Group>) -> Result<Self> {
        if times.len() != groups.len() {
            return Err(RcaError::invalid(format!(
                "time grid has {} times but {} group labels",
                times.len(),
                groups.len()
            )));
        }
        if times.is_empty() {
            return Err(RcaError::invalid("time grid is empty"));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(RcaError::invalid("time grid has non-finite times"));
        }
        Ok(TimeGrid { times, groups })
    }

    /// Treatment times followed by control times.
    pub fn concatenated(treatment: &[f64], control: &[f64]) -> Result<Self> {
        let times = treatment.iter().chain(control).copied().collect();
        let groups = std::iter::repeat_n(Group::Treatment, treatment.len())
            .chain(std::iter::repeat_n(Group::Control, control.len()))
            .collect();
        Self::new(times, groups)
    }

    /// The 20-point reference grid: 0:20:240 for treatment, then 0, 20, 40, 60, 120, 180, 240 for control.
    pub fn reference() -> Self {
        Self::concatenated(&TREATMENT_TIMES, &CONTROL_TIMES).expect("reference grid is valid")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }
}

/// Stationary covariance function over scalar time.
pub trait Kernel {
    fn eval(&self, a: f64, b: f64) -> f64;
}

/// `exp(−(t − t')² / (2ℓ²))`.
#[derive(Debug, Clone, Copy)]
pub struct SquaredExponential {
    pub lengthscale: f64,
}

impl Kernel for SquaredExponential {
    fn eval(&self, a: f64, b: f64) -> f64 {
        let d = (a - b) / self.lengthscale;
        (-0.5 * d * d).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub lengthscale: f64,
    /// Diagonal jitter as a fraction of the data variance.
    pub jitter_fraction: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            lengthscale: 20.0,
            jitter_fraction: 0.01,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0) || !self.lengthscale.is_finite() {
            return Err(RcaError::invalid(format!(
                "lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        if !(self.jitter_fraction >= 0.0) {
            return Err(RcaError::invalid("jitter fraction must be non-negative"));
        }
        Ok(())
    }
}

/// Gram matrix of `kernel` over every pair of grid points, regardless of group.
pub fn gram_matrix(grid: &TimeGrid, kernel: &impl Kernel, diagonal: f64) -> SymMatrix {
    let t = grid.times();
    let n = t.len();
    let mut k = DMatrix::from_fn(n, n, |i, j| kernel.eval(t[i], t[j]));
    for i in 0..n {
        k[(i, i)] += diagonal;
    }
    SymMatrix::symmetrize(k)
}

pub fn rbf_gram(grid: &TimeGrid, spec: &KernelSpec, data_variance: f64) -> Result<SymMatrix> {
    spec.validate()?;
    if spec.jitter_fraction > 0.0 && !(data_variance > 0.0) {
        return Err(RcaError::invalid(
            "data variance must be positive when jitter is requested",
        ));
    }
    let kernel = SquaredExponential {
        lengthscale: spec.lengthscale,
    };
    Ok(gram_matrix(
        grid,
        &kernel,
        spec.jitter_fraction * data_variance,
    ))
}

/// Subtracts each column's mean; returns the centered matrix and the means.
pub fn center_columns(data: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = data.nrows().max(1) as f64;
    let means: Vec<f64> = data.column_iter().map(|c| c.sum() / n).collect();
    let mut out = data.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    (out, means)
}

/// Mean of the per-column (population) variances.
pub fn data_variance(data: &DMatrix<f64>) -> f64 {
    let (centered, _) = center_columns(data);
    let n = data.nrows() as f64;
    let p = data.ncols() as f64;
    centered.norm_squared() / (n * p)
}

#[derive(Debug, Clone)]
pub struct ResidualScores {
    /// Norm of each feature column projected onto the retained generalized eigenvectors.
    pub scores: Vec<f64>,
    pub rank: usize,
    pub values: Vec<f64>,
}

/// Dual-role RCA of `(1/p) YYᵀ` against `gram`, scoring each column by `‖S_qᵀ y_j‖`.
///
/// `data` is expected to be centered already (rows are time points).
pub fn residual_scores(data: &DMatrix<f64>, gram: &SymMatrix) -> Result<ResidualScores> {
    if data.nrows() != gram.dim() {
        return Err(RcaError::invalid(format!(
            "data has {} time points but the Gram matrix is {}x{}",
            data.nrows(),
            gram.dim(),
            gram.dim()
        )));
    }
    if data.ncols() == 0 {
        return Err(RcaError::invalid("data has no feature columns"));
    }
    let c = second_moment(data, Role::Dual);
    let sol = rca_fit(&c, gram, RankChoice::Auto, Role::Dual)?;
    let scores = if sol.rank() == 0 {
        vec![0.0; data.ncols()]
    } else {
        let proj = sol.basis.tr_mul(data);
        proj.column_iter().map(|c| c.norm()).collect()
    };
    Ok(ResidualScores {
        scores,
        rank: sol.rank(),
        values: sol.all_values.iter().copied().collect(),
    })
}
