//! Detection losses with analytic gradients.
//!
//! The composite objective is
//! `bce + 2 * weighted_l1 + ce_seg + dice_seg`:
//! anchor classification, anchor box regression, and the two semantic
//! segmentation terms. Every term returns its value and the gradient with
//! respect to its prediction input. Reductions use pairwise summation so the
//! result does not depend on thread count or call site.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Weight of the box-regression term in [`total_loss`].
pub const REGRESSION_WEIGHT: f64 = 2.0;

/// Smoothing constant of the soft Dice term.
pub const DICE_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Sum with fixed pairwise reduction order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn same_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument(format!("{what}: length {a} vs {b}")));
    }
    Ok(())
}

/// Mean binary cross entropy over anchors.
pub fn bce(probs: &[f64], targets: &[f64]) -> Result<LossValue> {
    same_len("bce", probs.len(), targets.len())?;
    if probs.is_empty() {
        return Err(Error::InvalidArgument("bce on empty input".into()));
    }
    let n = probs.len() as f64;
    let mut terms = Vec::with_capacity(probs.len());
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &t) in probs.iter().zip(targets) {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("probability {p} not in (0, 1)")));
        }
        if t != 0.0 && t != 1.0 {
            return Err(Error::Domain(format!("target {t} is not binary")));
        }
        terms.push(-(t * p.ln() + (1.0 - t) * (1.0 - p).ln()));
        grad.push((p - t) / (p * (1.0 - p)) / n);
    }
    Ok(LossValue {
        value: pairwise_sum(&terms) / n,
        grad,
    })
}

/// `sum w |p - t| / max(1, #{w > 0})`, subgradient 0 where `p == t`.
pub fn weighted_l1(pred: &[f64], target: &[f64], weights: &[f64]) -> Result<LossValue> {
    same_len("weighted_l1", pred.len(), target.len())?;
    same_len("weighted_l1", pred.len(), weights.len())?;
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::InvalidArgument(format!("negative weight {w}")));
    }
    let active = weights.iter().filter(|&&w| w > 0.0).count();
    let norm = active.max(1) as f64;
    let terms: Vec<f64> = pred
        .iter()
        .zip(target)
        .zip(weights)
        .map(|((p, t), w)| w * (p - t).abs())
        .collect();
    let grad = pred
        .iter()
        .zip(target)
        .zip(weights)
        .map(|((p, t), w)| {
            let d = p - t;
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            w * sign / norm
        })
        .collect();
    Ok(LossValue {
        value: pairwise_sum(&terms) / norm,
        grad,
    })
}

fn check_seg(probs: &[f64], targets: &[usize], classes: usize) -> Result<usize> {
    if classes < 2 {
        return Err(Error::InvalidArgument("segmentation needs at least 2 classes".into()));
    }
    same_len("segmentation", probs.len(), targets.len() * classes)?;
    if targets.is_empty() {
        return Err(Error::InvalidArgument("segmentation on empty input".into()));
    }
    if let Some(t) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::InvalidArgument(format!("class index {t} >= {classes}")));
    }
    Ok(targets.len())
}

/// Voxel-mean cross entropy. `probs` is voxel-major: `probs[v * classes + c]`.
pub fn ce_seg(probs: &[f64], targets: &[usize], classes: usize) -> Result<LossValue> {
    let n = check_seg(probs, targets, classes)?;
    let mut terms = Vec::with_capacity(n);
    let mut grad = vec![0.0; probs.len()];
    for (v, &t) in targets.iter().enumerate() {
        let p = probs[v * classes + t];
        if !(p > 0.0) {
            return Err(Error::Domain(format!("target-class probability {p} at voxel {v}")));
        }
        terms.push(-p.ln());
        grad[v * classes + t] = -1.0 / (p * n as f64);
    }
    Ok(LossValue {
        value: pairwise_sum(&terms) / n as f64,
        grad,
    })
}

/// Soft Dice loss: `1 - mean_c (2 I_c + eps) / (P_c + T_c + eps)` over the
/// foreground classes `1..classes`.
pub fn dice_seg(probs: &[f64], targets: &[usize], classes: usize) -> Result<LossValue> {
    let n = check_seg(probs, targets, classes)?;
    let fg = classes - 1;
    let mut grad = vec![0.0; probs.len()];
    let mut coefficients = Vec::with_capacity(fg);
    for c in 1..classes {
        let p_c: Vec<f64> = (0..n).map(|v| probs[v * classes + c]).collect();
        let inter_terms: Vec<f64> = (0..n)
            .map(|v| if targets[v] == c { p_c[v] } else { 0.0 })
            .collect();
        let inter = pairwise_sum(&inter_terms);
        let psum = pairwise_sum(&p_c);
        let tsum = targets.iter().filter(|&&t| t == c).count() as f64;
        let num = 2.0 * inter + DICE_EPS;
        let den = psum + tsum + DICE_EPS;
        coefficients.push(num / den);
        for v in 0..n {
            let t = (targets[v] == c) as u8 as f64;
            grad[v * classes + c] = -(2.0 * t * den - num) / (den * den) / fg as f64;
        }
    }
    Ok(LossValue {
        value: 1.0 - pairwise_sum(&coefficients) / fg as f64,
        grad,
    })
}

/// Already-matched inputs of the four loss branches.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBatch {
    pub anchor_probs: Vec<f64>,
    pub anchor_targets: Vec<f64>,
    pub box_deltas_pred: Vec<f64>,
    pub box_deltas_target: Vec<f64>,
    pub delta_weights: Vec<f64>,
    pub seg_probs: Vec<f64>,
    pub seg_targets: Vec<usize>,
    pub seg_classes: usize,
}

impl LossBatch {
    pub fn validate(&self) -> Result<()> {
        if self.seg_classes >= 2 {
            for (v, row) in self.seg_probs.chunks(self.seg_classes).enumerate() {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-6 {
                    return Err(Error::Domain(format!("voxel {v} class probabilities sum to {s}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce: f64,
    pub l1: f64,
    pub ce_seg: f64,
    pub dice_seg: f64,
    pub total: f64,
}

/// Combines the four terms; the regression term carries weight 2.
pub fn combine(bce: f64, l1: f64, ce_seg: f64, dice_seg: f64) -> f64 {
    bce + REGRESSION_WEIGHT * l1 + ce_seg + dice_seg
}

pub fn loss_breakdown(batch: &LossBatch) -> Result<LossBreakdown> {
    batch.validate()?;
    let b = bce(&batch.anchor_probs, &batch.anchor_targets)?.value;
    let l = weighted_l1(&batch.box_deltas_pred, &batch.box_deltas_target, &batch.delta_weights)?.value;
    let ce = ce_seg(&batch.seg_probs, &batch.seg_targets, batch.seg_classes)?.value;
    let d = dice_seg(&batch.seg_probs, &batch.seg_targets, batch.seg_classes)?.value;
    Ok(LossBreakdown {
        bce: b,
        l1: l,
        ce_seg: ce,
        dice_seg: d,
        total: combine(b, l, ce, d),
    })
}

pub fn total_loss(batch: &LossBatch) -> Result<f64> {
    Ok(loss_breakdown(batch)?.total)
}
