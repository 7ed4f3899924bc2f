//! Stability selection over a λ path: refit on row subsamples and record how
//! often each edge is called.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edge::{all_edges, universe_size, Edge};
use crate::em::{em_rca_fit, EmRcaConfig};
use crate::error::{RcaError, Result};
use crate::eval::{edges_from_precision, EdgeMode};
use crate::glasso::{glasso_fit_warm, GlassoConfig, SparsePrecision};
use crate::kernels::center_columns;
use crate::rca::{second_moment, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    exponents: Vec<f64>,
    lambdas: Vec<f64>,
}

impl LambdaGrid {
    /// `count` exponents spaced linearly over `[lo_exp, hi_exp]`, inclusive, with `λ = 5^x`.
    pub fn new(count: usize, lo_exp: f64, hi_exp: f64) -> Result<Self> {
        if count < 2 {
            return Err(RcaError::invalid(format!(
                "lambda grid needs at least 2 points, got {count}"
            )));
        }
        if !(lo_exp < hi_exp) || !lo_exp.is_finite() || !hi_exp.is_finite() {
            return Err(RcaError::invalid(format!(
                "lambda exponent range [{lo_exp}, {hi_exp}] must be finite and increasing"
            )));
        }
        let step = (hi_exp - lo_exp) / (count - 1) as f64;
        let exponents: Vec<f64> = (0..count)
            .map(|k| {
                if k + 1 == count {
                    hi_exp
                } else {
                    lo_exp + step * k as f64
                }
            })
            .collect();
        let lambdas = exponents.iter().map(|&x| 5f64.powf(x)).collect();
        Ok(LambdaGrid { exponents, lambdas })
    }

    /// 23 points over `[−8, 3]`, spacing one half.
    pub fn reference() -> Self {
        Self::new(23, -8.0, 3.0).expect("reference grid is valid")
    }

    pub fn exponents(&self) -> &[f64] {
        &self.exponents
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Fitter {
    Glasso(GlassoConfig),
    EmRca(EmRcaConfig),
}

impl Fitter {
    pub fn name(&self) -> &'static str {
        match self {
            Fitter::Glasso(_) => "glasso",
            Fitter::EmRca(_) => "em_rca",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub repeats: usize,
    pub fraction: f64,
    pub seed: u64,
    pub mode: EdgeMode,
    /// Run repeats on the rayon pool; the output does not depend on this.
    pub parallel: bool,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            repeats: 100,
            fraction: 0.9,
            seed: 1,
            mode: EdgeMode::Support,
            parallel: true,
        }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(RcaError::invalid("repeats must be at least 1"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(RcaError::invalid(format!(
                "subsample fraction must lie in (0, 1], got {}",
                self.fraction
            )));
        }
        Ok(())
    }
}

/// Per-λ edge call frequencies over subsampled refits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgePath {
    pub p: usize,
    pub grid: LambdaGrid,
    pub repeats: usize,
    pub subsample_fraction: f64,
    pub fitter: String,
    /// Successful refits per λ; the denominator of that λ's frequencies.
    pub successes: Vec<usize>,
    /// One vector per λ, indexed by [`Edge::index`].
    pub frequencies: Vec<Vec<f64>>,
}

impl EdgePath {
    pub fn frequency(&self, lambda_index: usize, edge: Edge) -> f64 {
        self.frequencies[lambda_index][edge.index(self.p)]
    }

    /// Per-edge maximum frequency over the path.
    pub fn max_envelope(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; universe_size(self.p)];
        for row in &self.frequencies {
            for (o, &f) in out.iter_mut().zip(row) {
                *o = o.max(f);
            }
        }
        out
    }

    /// Per-edge mean frequency over the path (area under each edge's stability path).
    pub fn mean_frequency(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; universe_size(self.p)];
        for row in &self.frequencies {
            for (o, &f) in out.iter_mut().zip(row) {
                *o += f;
            }
        }
        let k = self.frequencies.len().max(1) as f64;
        out.iter_mut().for_each(|o| *o /= k);
        out
    }

    /// Long form: `lambda,i,j,frequency`, one row per λ and edge.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,i,j,frequency\n");
        for (k, row) in self.frequencies.iter().enumerate() {
            let lambda = self.grid.lambdas[k];
            for (e, f) in all_edges(self.p).zip(row) {
                s.push_str(&format!("{lambda:.16e},{},{},{f:.16e}\n", e.0, e.1));
            }
        }
        s
    }
}

/// Edges whose frequency at `lambda_index` is strictly above `threshold`.
pub fn threshold_edges(
    path: &EdgePath,
    lambda_index: usize,
    threshold: f64,
) -> Result<BTreeSet<Edge>> {
    let row = path.frequencies.get(lambda_index).ok_or_else(|| {
        RcaError::invalid(format!(
            "lambda index {lambda_index} out of range for a {}-point path",
            path.frequencies.len()
        ))
    })?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(RcaError::invalid(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    Ok(all_edges(path.p)
        .zip(row)
        .filter(|&(_, &f)| f > threshold)
        .map(|(e, _)| e)
        .collect())
}

/// Sorted row indices of repeat `repeat`: `⌊fraction·n⌋` distinct rows.
pub fn subsample_rows(n: usize, fraction: f64, seed: u64, repeat: usize) -> Vec<usize> {
    let m = ((fraction * n as f64).floor() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repeat as u64);
    let mut rows = rand::seq::index::sample(&mut rng, n, m).into_vec();
    rows.sort_unstable();
    rows
}

/// Edge calls of one repeat across the whole grid; `None` where the fit failed.
fn run_repeat(
    data: &DMatrix<f64>,
    fitter: &Fitter,
    grid: &LambdaGrid,
    config: &StabilityConfig,
    repeat: usize,
) -> Vec<Option<Vec<bool>>> {
    let rows = subsample_rows(data.nrows(), config.fraction, config.seed, repeat);
    let sub = data.select_rows(&rows);
    let (sub, _) = center_columns(&sub);
    let p = data.ncols();
    let calls = |prec: &SparsePrecision| {
        let called = edges_from_precision(prec, config.mode);
        let mut v = vec![false; universe_size(p)];
        for e in called.keys() {
            v[e.index(p)] = true;
        }
        v
    };

    let mut out = vec![None; grid.len()];
    match fitter {
        Fitter::Glasso(cfg) => {
            let s = second_moment(&sub, Role::Primal);
            // walk from the largest λ down, warm-starting each fit from the last
            let mut warm: Option<SparsePrecision> = None;
            for k in (0..grid.len()).rev() {
                match glasso_fit_warm(&s, grid.lambdas[k], cfg, warm.as_ref()) {
                    Ok(fit) => {
                        if !fit.converged {
                            log::debug!(
                                "glasso did not converge at lambda {} repeat {repeat}",
                                grid.lambdas[k]
                            );
                        }
                        out[k] = Some(calls(&fit.precision));
                        warm = Some(fit.precision);
                    }
                    Err(e) => log::warn!(
                        "glasso failed at lambda {} repeat {repeat}: {e}",
                        grid.lambdas[k]
                    ),
                }
            }
        }
        Fitter::EmRca(cfg) => {
            for (k, &lambda) in grid.lambdas.iter().enumerate() {
                match em_rca_fit(&sub, lambda, cfg) {
                    Ok(fit) => out[k] = Some(calls(&fit.state.precision)),
                    Err(e) => log::warn!("em_rca failed at lambda {lambda} repeat {repeat}: {e}"),
                }
            }
        }
    }
    out
}

pub fn stability_select(
    data: &DMatrix<f64>,
    fitter: &Fitter,
    grid: &LambdaGrid,
    config: &StabilityConfig,
) -> Result<EdgePath> {
    config.validate()?;
    let (n, p) = data.shape();
    if p < 2 {
        return Err(RcaError::invalid(
            "stability selection needs at least two features",
        ));
    }
    if ((config.fraction * n as f64).floor() as usize) < 2 {
        return Err(RcaError::invalid(format!(
            "subsamples of {n} rows at fraction {} hold fewer than two rows",
            config.fraction
        )));
    }

    let per_repeat: Vec<Vec<Option<Vec<bool>>>> = if config.parallel {
        (0..config.repeats)
            .into_par_iter()
            .map(|r| run_repeat(data, fitter, grid, config, r))
            .collect()
    } else {
        (0..config.repeats)
            .map(|r| run_repeat(data, fitter, grid, config, r))
            .collect()
    };

    let m = universe_size(p);
    let mut counts = vec![vec![0usize; m]; grid.len()];
    let mut successes = vec![0usize; grid.len()];
    for repeat in &per_repeat {
        for (k, calls) in repeat.iter().enumerate() {
            if let Some(calls) = calls {
                successes[k] += 1;
                for (c, &hit) in counts[k].iter_mut().zip(calls) {
                    *c += hit as usize;
                }
            }
        }
    }
    let frequencies = counts
        .iter()
        .zip(&successes)
        .map(|(row, &s)| {
            if s == 0 {
                vec![0.0; m]
            } else {
                row.iter().map(|&c| c as f64 / s as f64).collect()
            }
        })
        .collect();

    Ok(EdgePath {
        p,
        grid: grid.clone(),
        repeats: config.repeats,
        subsample_fraction: config.fraction,
        fitter: fitter.name().to_string(),
        successes,
        frequencies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        let g = LambdaGrid::new(2, -8.0, 3.0).unwrap();
        assert_eq!(g.lambdas(), &[5f64.powi(-8), 125.0]);
        let g = LambdaGrid::new(3, 0.0, 2.0).unwrap();
        assert_eq!(g.lambdas(), &[1.0, 5.0, 25.0]);
        let g = LambdaGrid::new(12, -8.0, 3.0).unwrap();
        for w in g.exponents().windows(2) {
            assert_eq!(w[1] - w[0], 1.0);
        }
        assert_eq!(LambdaGrid::reference().len(), 23);
        assert!(LambdaGrid::new(1, 0.0, 1.0).is_err());
        assert!(LambdaGrid::new(3, 1.0, 1.0).is_err());
    }

    #[test]
    fn strict_threshold() {
        let path = EdgePath {
            p: 3,
            grid: LambdaGrid::new(2, 0.0, 1.0).unwrap(),
            repeats: 10,
            subsample_fraction: 0.9,
            fitter: "glasso".into(),
            successes: vec![10, 10],
            frequencies: vec![vec![0.9, 0.5, 0.2], vec![1.0, 0.0, 0.0]],
        };
        assert_eq!(
            threshold_edges(&path, 0, 0.5).unwrap(),
            BTreeSet::from([Edge(0, 1)])
        );
        assert_eq!(threshold_edges(&path, 0, 0.0).unwrap().len(), 3);
        assert!(threshold_edges(&path, 0, 1.0).unwrap().is_empty());
        assert_eq!(
            threshold_edges(&path, 1, 0.99).unwrap(),
            BTreeSet::from([Edge(0, 1)])
        );
        assert!(threshold_edges(&path, 2, 0.5).is_err());
        assert_eq!(path.max_envelope(), vec![1.0, 0.5, 0.2]);
    }

    #[test]
    fn subsample_shape() {
        let rows = subsample_rows(100, 0.9, 7, 3);
        assert_eq!(rows.len(), 90);
        assert!(rows.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(rows, subsample_rows(100, 0.9, 7, 3));
        assert_ne!(rows, subsample_rows(100, 0.9, 7, 4));
        assert_eq!(subsample_rows(10, 1.0, 0, 0), (0..10).collect::<Vec<_>>());
    }
}
