//! Set-prediction loss over a fixed assignment, and its analytic gradients
//! with respect to query logits and pre-activation box parameters.
//!
//! Matched queries pay cross-entropy on the target class plus weighted L1
//! box terms; unmatched queries pay cross-entropy on the background class
//! only. Everything is divided by the number of ground truths. The index
//! cost weight in [`CostCoeffs`] is ignored here.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::NormalizedTarget;
use crate::matching::{CostCoeffs, GroundTruth, MatchAssignment, Prediction};

/// Probabilities are clamped to this before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossOptions {
    /// Multiplier on background cross-entropy terms.
    pub background_weight: f64,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            background_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtTerm {
    pub label: u16,
    pub query_index: u16,
    pub classification: f64,
    pub position: f64,
    pub scale: f64,
    pub angle: f64,
}

/// Unweighted parts, each averaged over the ground truths; `total` applies
/// the coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Matched plus background cross-entropy.
    pub classification: f64,
    pub position: f64,
    pub scale: f64,
    pub angle: f64,
    /// Background share of `classification`.
    pub background: f64,
    pub per_gt: Vec<GtTerm>,
    /// Set when some probability hit [`PROB_CLAMP`].
    pub clamped: bool,
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn normalizer(num_gts: usize) -> f64 {
    num_gts.max(1) as f64
}

pub fn set_loss(
    preds: &[Prediction],
    gts: &[GroundTruth],
    assignment: &MatchAssignment,
    coeffs: &CostCoeffs,
    options: &LossOptions,
) -> Result<LossBreakdown> {
    assignment.validate(preds.len(), gts.len())?;
    let mut clamped = false;
    let mut neg_log = |p: f64| {
        if p < PROB_CLAMP {
            clamped = true;
        }
        -p.max(PROB_CLAMP).ln()
    };

    let per_gt: Vec<GtTerm> = gts
        .iter()
        .zip(&assignment.gt_to_slot)
        .map(|(gt, &slot)| {
            let pred = &preds[slot];
            GtTerm {
                label: gt.label,
                query_index: pred.query_index,
                classification: neg_log(pred.prob(gt.label)),
                position: l1(pred.target.position(), gt.target.position()),
                scale: l1(pred.target.scale(), gt.target.scale()),
                angle: l1(pred.target.angle(), gt.target.angle()),
            }
        })
        .collect();
    let background_sum: f64 = assignment
        .background_slots(preds.len())
        .into_iter()
        .map(|s| neg_log(preds[s].prob(0)))
        .sum();

    let n = normalizer(gts.len());
    let background = options.background_weight * background_sum / n;
    let classification = per_gt.iter().map(|t| t.classification).sum::<f64>() / n + background;
    let position = per_gt.iter().map(|t| t.position).sum::<f64>() / n;
    let scale = per_gt.iter().map(|t| t.scale).sum::<f64>() / n;
    let angle = per_gt.iter().map(|t| t.angle).sum::<f64>() / n;
    let total = coeffs.class * classification
        + coeffs.position * position
        + coeffs.scale * scale
        + coeffs.angle * angle;
    Ok(LossBreakdown {
        total,
        classification,
        position,
        scale,
        angle,
        background,
        per_gt,
        clamped,
    })
}

/// Query output before activation: softmax over `logits`, logistic on `box_params`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPrediction {
    pub query_index: u16,
    pub logits: Vec<f64>,
    pub box_params: [f64; 9],
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

impl RawPrediction {
    pub fn activate(&self) -> Prediction {
        Prediction {
            query_index: self.query_index,
            class_probs: softmax(&self.logits),
            target: NormalizedTarget(self.box_params.map(sigmoid)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrad {
    pub logits: Vec<f64>,
    pub box_params: [f64; 9],
}

impl PredictionGrad {
    pub fn zeros(num_logits: usize) -> Self {
        Self {
            logits: vec![0.0; num_logits],
            box_params: [0.0; 9],
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.logits
            .iter()
            .chain(&self.box_params)
            .map(|g| g * g)
            .sum()
    }

    pub fn add_scaled(&mut self, other: &PredictionGrad, factor: f64) {
        for (a, b) in self.logits.iter_mut().zip(&other.logits) {
            *a += factor * b;
        }
        for (a, b) in self.box_params.iter_mut().zip(&other.box_params) {
            *a += factor * b;
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of [`set_loss`] (evaluated on [`RawPrediction::activate`]) for
/// every raw parameter, with the assignment held fixed. The cross-entropy
/// gradient is the unclamped log-softmax one; the L1 subgradient at zero is 0.
pub fn loss_gradients(
    raw: &[RawPrediction],
    gts: &[GroundTruth],
    assignment: &MatchAssignment,
    coeffs: &CostCoeffs,
    options: &LossOptions,
) -> Result<Vec<PredictionGrad>> {
    assignment.validate(raw.len(), gts.len())?;
    let n = normalizer(gts.len());
    let mut grads: Vec<PredictionGrad> = raw
        .iter()
        .map(|r| PredictionGrad::zeros(r.logits.len()))
        .collect();

    let ce_grad = |r: &RawPrediction, class: usize, weight: f64, out: &mut PredictionGrad| {
        let probs = softmax(&r.logits);
        for (k, p) in probs.iter().enumerate() {
            let target = if k == class { 1.0 } else { 0.0 };
            out.logits[k] += weight * (p - target);
        }
    };

    for (gt, &slot) in gts.iter().zip(&assignment.gt_to_slot) {
        let r = &raw[slot];
        ce_grad(r, gt.label as usize, coeffs.class / n, &mut grads[slot]);
        let weights = [coeffs.position, coeffs.scale, coeffs.angle];
        for k in 0..9 {
            let s = sigmoid(r.box_params[k]);
            let d = sign(s - gt.target.0[k]) * s * (1.0 - s);
            grads[slot].box_params[k] += weights[k / 3] / n * d;
        }
    }
    let bg_weight = coeffs.class * options.background_weight / n;
    for slot in assignment.background_slots(raw.len()) {
        ce_grad(&raw[slot], 0, bg_weight, &mut grads[slot]);
    }
    Ok(grads)
}
