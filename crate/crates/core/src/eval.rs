//! Edge-recovery and ranking metrics.
//!
//! Curves are computed with block tie handling: all items sharing a score
//! enter the prediction set together, so a curve never depends on the order in
//! which tied items are enumerated.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::edge::{all_edges, universe_size, Edge};
use crate::error::{RcaError, Result};
use crate::glasso::{SparsePrecision, ZERO_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMode {
    /// Every non-zero off-diagonal entry is an edge, scored by `|Λ_ij|`.
    #[default]
    Support,
    /// Only negative entries are edges, scored by `−Λ_ij`.
    Negative,
}

impl std::str::FromStr for EdgeMode {
    type Err = RcaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "support" => Ok(EdgeMode::Support),
            "negative" => Ok(EdgeMode::Negative),
            other => Err(RcaError::invalid(format!("unknown edge mode '{other}'"))),
        }
    }
}

/// Called edges with their scores; uncalled edges are absent.
pub fn edges_from_precision(precision: &SparsePrecision, mode: EdgeMode) -> BTreeMap<Edge, f64> {
    let m = precision.entries();
    let mut out = BTreeMap::new();
    for e in all_edges(precision.dim()) {
        let v = m[(e.0, e.1)];
        let score = match mode {
            EdgeMode::Support if v.abs() > ZERO_THRESHOLD => v.abs(),
            EdgeMode::Negative if v < -ZERO_THRESHOLD => -v,
            _ => continue,
        };
        out.insert(e, score);
    }
    out
}

/// Scores over the full edge universe of a `p`-node graph plus the true edge set.
#[derive(Debug, Clone)]
pub struct EdgeScoreSet {
    p: usize,
    /// Indexed by [`Edge::index`].
    scores: Vec<f64>,
    truth: BTreeSet<Edge>,
}

impl EdgeScoreSet {
    /// Edges missing from `scores` get score zero.
    pub fn new(p: usize, scores: &BTreeMap<Edge, f64>, truth: BTreeSet<Edge>) -> Result<Self> {
        let mut dense = vec![0.0; universe_size(p)];
        for (e, &s) in scores {
            if e.1 >= p {
                return Err(RcaError::invalid(format!(
                    "edge {e:?} outside a {p}-node graph"
                )));
            }
            if !s.is_finite() {
                return Err(RcaError::invalid(format!(
                    "edge {e:?} has a non-finite score"
                )));
            }
            dense[e.index(p)] = s;
        }
        Self::from_dense(p, dense, truth)
    }

    pub fn from_dense(p: usize, scores: Vec<f64>, truth: BTreeSet<Edge>) -> Result<Self> {
        if scores.len() != universe_size(p) {
            return Err(RcaError::invalid(format!(
                "expected {} edge scores, got {}",
                universe_size(p),
                scores.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(RcaError::invalid("edge scores must be finite"));
        }
        if let Some(e) = truth.iter().find(|e| e.1 >= p) {
            return Err(RcaError::invalid(format!(
                "true edge {e:?} outside a {p}-node graph"
            )));
        }
        Ok(EdgeScoreSet { p, scores, truth })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn truth(&self) -> &BTreeSet<Edge> {
        &self.truth
    }

    pub fn labels(&self) -> Vec<bool> {
        all_edges(self.p).map(|e| self.truth.contains(&e)).collect()
    }

    pub fn prevalence(&self) -> f64 {
        self.truth.len() as f64 / self.scores.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    /// `(recall, precision)` or `(fpr, tpr)` pairs.
    pub points: Vec<(f64, f64)>,
    pub area: f64,
}

/// Trapezoidal area under a polyline.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum()
}

/// Score blocks in descending order: `(positives, negatives)` per distinct score.
fn tie_blocks(scores: &[f64], labels: &[bool]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut blocks = Vec::new();
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (mut pos, mut neg) = (0, 0);
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                pos += 1;
            } else {
                neg += 1;
            }
            k += 1;
        }
        blocks.push((pos, neg));
    }
    blocks
}

/// Precision-recall curve, sweeping the threshold down until recall reaches one.
///
/// `points` holds one operating point per score block. `area` integrates the
/// points by the trapezoid rule after prepending `(0, p₁)`, the first point's
/// precision carried back to zero recall.
pub fn precision_recall(set: &EdgeScoreSet) -> Result<Curve> {
    if set.truth.is_empty() {
        return Err(RcaError::invalid(
            "precision-recall needs at least one true edge",
        ));
    }
    let labels = set.labels();
    let total_true = set.truth.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::new();
    for (pos, neg) in tie_blocks(&set.scores, &labels) {
        tp += pos;
        fp += neg;
        points.push((tp as f64 / total_true, tp as f64 / (tp + fp) as f64));
        if tp == set.truth.len() {
            break;
        }
    }
    let area = pr_area(&points);
    Ok(Curve { points, area })
}

/// Trapezoid area of PR points with the zero-recall anchor.
pub fn pr_area(points: &[(f64, f64)]) -> f64 {
    match points.first() {
        None => 0.0,
        Some(&(_, p0)) => {
            let mut anchored = Vec::with_capacity(points.len() + 1);
            anchored.push((0.0, p0));
            anchored.extend_from_slice(points);
            trapezoid(&anchored)
        }
    }
}

/// ROC curve from `(0, 0)` to `(1, 1)`; the area equals the Mann-Whitney statistic with ties counted half.
pub fn roc(scores: &[f64], labels: &[bool]) -> Result<Curve> {
    if scores.len() != labels.len() {
        return Err(RcaError::invalid("roc: scores and labels differ in length"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(RcaError::invalid("roc: scores must be finite"));
    }
    let pos_total = labels.iter().filter(|&&l| l).count();
    let neg_total = labels.len() - pos_total;
    if pos_total == 0 || neg_total == 0 {
        return Err(RcaError::invalid(
            "roc needs both positive and negative labels",
        ));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    // twice the area in units of one positive × one negative, kept exact
    let mut doubled = 0u128;
    let mut points = vec![(0.0, 0.0)];
    for (pos, neg) in tie_blocks(scores, labels) {
        doubled += (neg as u128) * (2 * tp as u128 + pos as u128);
        tp += pos;
        fp += neg;
        points.push((fp as f64 / neg_total as f64, tp as f64 / pos_total as f64));
    }
    let area = doubled as f64 / (2.0 * pos_total as f64 * neg_total as f64);
    Ok(Curve { points, area })
}
