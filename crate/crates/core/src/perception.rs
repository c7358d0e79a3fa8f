//! Confidence-map algebra: cell prioritisation and top-k selection, masking,
//! fusion, focal classification loss, the label-free utility and grid-level
//! detection metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{BinaryMap, ConfidenceMap, SelectionMask};

/// Lower/upper clamp applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_cls: f64,
    /// Box regression heads are not modelled; kept for completeness and
    /// must stay zero in the surrogate.
    pub lambda_loc: f64,
    pub lambda_dir: f64,
    /// Class-balance weight of positive cells.
    pub eta: f64,
    /// Focusing exponent.
    pub beta: f64,
    /// Classification threshold.
    pub zeta: f64,
    /// Utility threshold on squared confidence change.
    pub xi: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_loc: 0.0,
            lambda_dir: 0.0,
            eta: 0.25,
            beta: 2.0,
            zeta: 0.5,
            xi: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_cls,
            self.lambda_loc,
            self.lambda_dir,
            self.eta,
            self.beta,
            self.zeta,
            self.xi,
        ];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::config("loss weights must be finite and >= 0"));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) || !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::config("zeta and xi must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionRule {
    /// `1 - (1 - τ_e)(1 - τ_j)`
    #[default]
    NoisyOr,
    /// `max(τ_e, τ_j)`
    Max,
}

/// Transmission priority of every cell: `τ_j² · (1 - τ_ref)`.
pub fn priority_scores(tau_j: &ConfidenceMap, tau_ref: &ConfidenceMap) -> Result<ConfidenceMap> {
    tau_j.check_dims(tau_ref.dims())?;
    let (h, w) = tau_j.dims();
    let values = tau_j
        .values()
        .iter()
        .zip(tau_ref.values())
        .map(|(&tj, &te)| tj * tj * (1.0 - te))
        .collect();
    ConfidenceMap::from_values(h, w, values)
}

/// Top-`budget` cells by score. Zero-score cells are never selected and ties
/// go to the lower row-major index.
pub fn selection_mask(scores: &ConfidenceMap, budget: usize) -> SelectionMask {
    let (h, w) = scores.dims();
    let vals = scores.values();
    let mut cand: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 0.0).collect();
    let order = |a: &usize, b: &usize| vals[*b].total_cmp(&vals[*a]).then(a.cmp(b));
    if budget < cand.len() {
        if budget > 0 {
            cand.select_nth_unstable_by(budget - 1, order);
        }
        cand.truncate(budget);
    }
    let mut mask = BinaryMap::empty(h, w);
    for i in cand {
        mask.set_index(i, true);
    }
    mask
}

/// Zero out transmitted cells of a collaborator map.
pub fn mask_out(tau_j: &ConfidenceMap, mask: &SelectionMask) -> Result<ConfidenceMap> {
    tau_j.check_dims(mask.dims())?;
    let mut out = tau_j.clone();
    for i in mask.ones() {
        out.values_mut()[i] = 0.0;
    }
    Ok(out)
}

/// Fuse the received cells of `tau_j` into the ego map; other cells keep
/// their ego value.
pub fn fuse_confidence(
    tau_e: &ConfidenceMap,
    tau_j: &ConfidenceMap,
    mask: &SelectionMask,
    rule: FusionRule,
) -> Result<ConfidenceMap> {
    tau_e.check_dims(tau_j.dims())?;
    tau_e.check_dims(mask.dims())?;
    let mut out = tau_e.clone();
    let tj = tau_j.values();
    for i in mask.ones() {
        let te = out.values()[i];
        let fused = match rule {
            FusionRule::NoisyOr => 1.0 - (1.0 - te) * (1.0 - tj[i]),
            FusionRule::Max => te.max(tj[i]),
        };
        out.values_mut()[i] = fused.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Focal loss contribution of one cell.
#[inline]
pub fn focal_term(tau: f64, positive: bool, w: &LossWeights) -> f64 {
    let (p, alpha) = if positive {
        (tau, w.eta)
    } else {
        (1.0 - tau, 1.0 - w.eta)
    };
    let p = p.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
    -alpha * (1.0 - p).powf(w.beta) * p.ln()
}

/// Focal classification loss summed over all cells.
pub fn focal_cls_loss(tau: &ConfidenceMap, gt: &BinaryMap, w: &LossWeights) -> Result<f64> {
    tau.check_dims(gt.dims())?;
    Ok(tau
        .values()
        .iter()
        .zip(gt.bits())
        .map(|(&t, &g)| focal_term(t, g, w))
        .sum())
}

/// Detection loss of the surrogate. Only the classification head exists, so
/// the localisation and direction terms contribute nothing.
pub fn detection_loss(tau: &ConfidenceMap, gt: &BinaryMap, w: &LossWeights) -> Result<f64> {
    Ok(w.lambda_cls * focal_cls_loss(tau, gt, w)?)
}

/// Utility of one cell update: `max(T, G)` with `T` the threshold-crossing
/// indicator and `G = ReLU(Δτ² - ξ)`.
#[inline]
pub fn utility_term(prev: f64, new: f64, w: &LossWeights) -> f64 {
    let crossed = (new - w.zeta) * (prev - w.zeta) < 0.0;
    let d = new - prev;
    let g = (d * d - w.xi).max(0.0);
    if crossed {
        g.max(1.0)
    } else {
        g
    }
}

/// Label-free utility summed over the transmitted region.
pub fn utility(
    tau_prev: &ConfidenceMap,
    tau_new: &ConfidenceMap,
    region: &SelectionMask,
    w: &LossWeights,
) -> Result<f64> {
    tau_prev.check_dims(tau_new.dims())?;
    tau_prev.check_dims(region.dims())?;
    let (p, n) = (tau_prev.values(), tau_new.values());
    Ok(region.ones().map(|i| utility_term(p[i], n[i], w)).sum())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub cls_accuracy: f64,
}

/// Cell-level confusion metrics with `τ > ζ` as a positive prediction.
pub fn grid_metrics(tau: &ConfidenceMap, gt: &BinaryMap, zeta: f64) -> Result<GridMetrics> {
    tau.check_dims(gt.dims())?;
    let mut m = GridMetrics::default();
    for (&t, &g) in tau.values().iter().zip(gt.bits()) {
        match (t > zeta, g) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, true) => m.fn_ += 1,
            (false, false) => m.tn += 1,
        }
    }
    let predicted = m.tp + m.fp;
    let actual = m.tp + m.fn_;
    m.precision = match (predicted, actual) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => m.tp as f64 / predicted as f64,
    };
    m.recall = if actual == 0 { 1.0 } else { m.tp as f64 / actual as f64 };
    m.f1 = if m.precision + m.recall > 0.0 {
        2.0 * m.precision * m.recall / (m.precision + m.recall)
    } else {
        0.0
    };
    let total = tau.len().max(1);
    m.cls_accuracy = (m.tp + m.tn) as f64 / total as f64;
    Ok(m)
}
