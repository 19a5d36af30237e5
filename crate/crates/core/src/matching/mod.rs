//! Bipartite matching between ground-truth anatomies and label-bound queries.
//!
//! The pair cost adds an index cost `λ_m · M[q, c]` to the usual
//! classification and L1 box terms. `M` grows with the gap between the query
//! index and the class label, which nudges query `q` towards label `q` during
//! matching only; the training loss never sees it.

mod hungarian;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NormalizedTarget;

pub use hungarian::{hungarian, Assignment, CostMatrix};

/// Tolerance on the unit sum of class probabilities.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Weights shared by the matching cost and the set loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostCoeffs {
    #[serde(rename = "lambda_c")]
    pub class: f64,
    #[serde(rename = "lambda_p")]
    pub position: f64,
    #[serde(rename = "lambda_s")]
    pub scale: f64,
    #[serde(rename = "lambda_a")]
    pub angle: f64,
    /// Index-cost weight; used by matching only.
    #[serde(rename = "lambda_m")]
    pub index: f64,
}

impl Default for CostCoeffs {
    fn default() -> Self {
        Self {
            class: 1.0,
            position: 10.0,
            scale: 10.0,
            angle: 10.0,
            index: 4.0,
        }
    }
}

impl CostCoeffs {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.class,
            self.position,
            self.scale,
            self.angle,
            self.index,
        ];
        if all.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config(format!(
                "cost coefficients must be >= 0: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn with_index(self, index: f64) -> Self {
        Self { index, ..self }
    }

    /// Plain bipartite matching, no index cost.
    pub fn without_index_cost(self) -> Self {
        self.with_index(0.0)
    }
}

/// `(Q+1) × (Q+1)` index cost: row = query index, column = class label,
/// `M[q, c] = |q - c| / Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexCostMatrix {
    queries: usize,
    values: Vec<f64>,
}

impl IndexCostMatrix {
    pub fn new(queries: usize) -> Result<Self> {
        if queries == 0 {
            return Err(Error::Config("index cost needs at least one query".into()));
        }
        let n = queries + 1;
        let values = (0..n * n)
            .map(|k| (k / n).abs_diff(k % n) as f64 / queries as f64)
            .collect();
        Ok(Self { queries, values })
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn get(&self, query: usize, class: usize) -> f64 {
        assert!(
            query <= self.queries && class <= self.queries,
            "index cost lookup out of range"
        );
        self.values[query * (self.queries + 1) + class]
    }
}

pub fn build_index_cost(queries: usize) -> Result<IndexCostMatrix> {
    IndexCostMatrix::new(queries)
}

/// Output of one query: class distribution (channel 0 = background) and box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub query_index: u16,
    pub class_probs: Vec<f64>,
    pub target: NormalizedTarget,
}

impl Prediction {
    pub fn new(query_index: u16, class_probs: Vec<f64>, target: NormalizedTarget) -> Result<Self> {
        let sum: f64 = class_probs.iter().sum();
        if class_probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Config(format!(
                "class probabilities of query {query_index} are not a distribution (sum {sum})"
            )));
        }
        if query_index == 0 || query_index as usize >= class_probs.len() {
            return Err(Error::UnknownLabel(query_index));
        }
        Ok(Self {
            query_index,
            class_probs,
            target,
        })
    }

    /// Certain prediction of `label`, bound to query `label`.
    pub fn one_hot(label: u16, num_classes: usize, target: NormalizedTarget) -> Self {
        let mut class_probs = vec![0.0; num_classes + 1];
        class_probs[label as usize] = 1.0;
        Self {
            query_index: label,
            class_probs,
            target,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_probs.len() - 1
    }

    pub fn prob(&self, class: u16) -> f64 {
        self.class_probs.get(class as usize).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub label: u16,
    pub target: NormalizedTarget,
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Matching cost of assigning `gt` to `pred`.
pub fn pair_cost(
    pred: &Prediction,
    gt: &GroundTruth,
    coeffs: &CostCoeffs,
    index_cost: &IndexCostMatrix,
) -> f64 {
    let p = &pred.target;
    let t = &gt.target;
    -coeffs.class * pred.prob(gt.label)
        + coeffs.position * l1(p.position(), t.position())
        + coeffs.scale * l1(p.scale(), t.scale())
        + coeffs.angle * l1(p.angle(), t.angle())
        + coeffs.index * index_cost.get(pred.query_index as usize, gt.label as usize)
}

/// `N × Q` matrix of [`pair_cost`], rows = ground truths, columns = predictions.
pub fn cost_matrix(
    preds: &[Prediction],
    gts: &[GroundTruth],
    coeffs: &CostCoeffs,
    index_cost: &IndexCostMatrix,
) -> CostMatrix {
    CostMatrix::from_fn(gts.len(), preds.len(), |i, j| {
        pair_cost(&preds[j], &gts[i], coeffs, index_cost)
    })
}

/// Ground truth `i` ↦ prediction slot; slots not listed are background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchAssignment {
    pub gt_to_slot: Vec<usize>,
    pub total_cost: f64,
}

impl MatchAssignment {
    /// Slots of `preds` bound to the background class.
    pub fn background_slots(&self, num_preds: usize) -> Vec<usize> {
        let mut matched = vec![false; num_preds];
        for &s in &self.gt_to_slot {
            matched[s] = true;
        }
        (0..num_preds).filter(|&s| !matched[s]).collect()
    }

    /// `(query index, label)` per ground truth.
    pub fn bindings(&self, preds: &[Prediction], gts: &[GroundTruth]) -> Vec<(u16, u16)> {
        self.gt_to_slot
            .iter()
            .zip(gts)
            .map(|(&s, gt)| (preds[s].query_index, gt.label))
            .collect()
    }

    pub fn validate(&self, num_preds: usize, num_gts: usize) -> Result<()> {
        if self.gt_to_slot.len() != num_gts {
            return Err(Error::Config(format!(
                "assignment covers {} ground truths, expected {num_gts}",
                self.gt_to_slot.len()
            )));
        }
        let mut seen = vec![false; num_preds];
        for &s in &self.gt_to_slot {
            if s >= num_preds || std::mem::replace(&mut seen[s], true) {
                return Err(Error::Config(format!(
                    "assignment is not injective at slot {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Optimal injective assignment of ground truths to predictions.
pub fn match_predictions(
    preds: &[Prediction],
    gts: &[GroundTruth],
    coeffs: &CostCoeffs,
    index_cost: &IndexCostMatrix,
) -> Result<MatchAssignment> {
    for gt in gts {
        if gt.label == 0 || gt.label as usize > index_cost.queries() {
            return Err(Error::UnknownLabel(gt.label));
        }
    }
    for p in preds {
        if p.query_index == 0 || p.query_index as usize > index_cost.queries() {
            return Err(Error::UnknownLabel(p.query_index));
        }
    }
    let cost = cost_matrix(preds, gts, coeffs, index_cost);
    let a = hungarian(&cost)?;
    Ok(MatchAssignment {
        gt_to_slot: a.row_to_col,
        total_cost: a.total,
    })
}

/// Predictions of exactly the requested query indices, in ascending order.
pub fn steer(
    preds: &[Prediction],
    requested: &BTreeSet<u16>,
    num_classes: usize,
) -> Result<Vec<Prediction>> {
    requested
        .iter()
        .map(|&label| {
            if label == 0 || label as usize > num_classes {
                return Err(Error::UnknownLabel(label));
            }
            preds
                .iter()
                .find(|p| p.query_index == label)
                .cloned()
                .ok_or(Error::UnknownLabel(label))
        })
        .collect()
}
