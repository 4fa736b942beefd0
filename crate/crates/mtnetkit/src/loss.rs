//! Training objectives for the three-branch prediction head, with analytic gradients.
//!
//! Three parts, combined by a weighted sum:
//!
//! * classification — binary cross-entropy whose positive terms are scaled
//!   by the proposal's IoU against ground truth, so a confidently-classified
//!   but badly-placed proposal earns no credit;
//! * regression — L1 plus complete-IoU loss over positive proposals, the
//!   complete-IoU part weighted by the proposal's foreground probability;
//! * localization — soft-target binary cross-entropy against IoU scores.
//!
//! The IoU weight in the classification loss and the probability weight in
//! the regression loss are treated as constants (no gradient flows through
//! them). Probabilities are clamped to `[EPS, 1-EPS]` before any log so the
//! losses stay finite on the closed interval.

use crate::bbox::{ciou_grad, ciou_loss, NormBox};

/// Log-clamp bound for probabilities.
pub const EPS: f64 = 1e-12;

/// Loss weights. Defaults: L1/complete-IoU mix 5/2 inside the regression
/// term; classification/regression/localization combined 8/5/1.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_l1: f64,
    pub lambda_ciou: f64,
    pub w_cls: f64,
    pub w_reg: f64,
    pub w_loc: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_l1: 5.0,
            lambda_ciou: 2.0,
            w_cls: 8.0,
            w_reg: 5.0,
            w_loc: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("lambda_l1", self.lambda_l1),
            ("lambda_ciou", self.lambda_ciou),
            ("w_cls", self.w_cls),
            ("w_reg", self.w_reg),
            ("w_loc", self.w_loc),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("loss weight {name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// IoU-weighted binary cross-entropy over foreground probabilities:
/// `-Σ_j (y_j · ln(p_j) · iou_j + (1-y_j) · ln(1-p_j))`.
///
/// `ious[j]` is the IoU between proposal j's box and the ground truth,
/// consumed as a constant weight. With all IoUs equal to 1 this reduces to
/// plain binary cross-entropy.
pub fn cls_loss(fg_probs: &[f64], labels: &[bool], ious: &[f64]) -> f64 {
    assert_eq!(fg_probs.len(), labels.len());
    assert_eq!(fg_probs.len(), ious.len());
    let mut total = 0.0;
    for ((&p, &y), &iou) in fg_probs.iter().zip(labels).zip(ious) {
        let p = clamp_prob(p);
        if y {
            total -= p.ln() * iou;
        } else {
            total -= (1.0 - p).ln();
        }
    }
    total
}

/// Gradient of [`cls_loss`] w.r.t. each probability: `-iou_j/p_j` on
/// positives, `1/(1-p_j)` on negatives.
pub fn cls_grad(fg_probs: &[f64], labels: &[bool], ious: &[f64]) -> Vec<f64> {
    assert_eq!(fg_probs.len(), labels.len());
    assert_eq!(fg_probs.len(), ious.len());
    fg_probs
        .iter()
        .zip(labels)
        .zip(ious)
        .map(|((&p, &y), &iou)| {
            let p = clamp_prob(p);
            if y {
                -iou / p
            } else {
                1.0 / (1.0 - p)
            }
        })
        .collect()
}

/// Regression loss restricted to positive proposals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegLoss {
    pub value: f64,
    /// Number of positive proposals that contributed. Zero means the loss
    /// is vacuously 0 — callers should treat that as "nothing to regress",
    /// not as a perfect fit.
    pub positives: usize,
}

fn l1_distance(a: &NormBox, b: &NormBox) -> f64 {
    (a.cx - b.cx).abs() + (a.cy - b.cy).abs() + (a.w - b.w).abs() + (a.h - b.h).abs()
}

/// `Σ_{j: y_j} (lambda_l1 · L1(b_j, gt) + lambda_ciou · ciou(b_j, gt) · p_j)`.
/// The foreground probability `p_j` scales only the complete-IoU part and
/// carries no gradient.
pub fn reg_loss(
    boxes: &[NormBox],
    labels: &[bool],
    fg_probs: &[f64],
    gt: &NormBox,
    cfg: &LossConfig,
) -> RegLoss {
    assert_eq!(boxes.len(), labels.len());
    assert_eq!(boxes.len(), fg_probs.len());
    let mut value = 0.0;
    let mut positives = 0;
    for ((b, &y), &p) in boxes.iter().zip(labels).zip(fg_probs) {
        if !y {
            continue;
        }
        positives += 1;
        value += cfg.lambda_l1 * l1_distance(b, gt) + cfg.lambda_ciou * ciou_loss(b, gt) * p;
    }
    RegLoss { value, positives }
}

/// Gradient of [`reg_loss`] w.r.t. each box's `(cx, cy, w, h)`; zero rows
/// for negatives. L1 kinks use subgradient 0.
pub fn reg_grad(
    boxes: &[NormBox],
    labels: &[bool],
    fg_probs: &[f64],
    gt: &NormBox,
    cfg: &LossConfig,
) -> Vec<[f64; 4]> {
    assert_eq!(boxes.len(), labels.len());
    assert_eq!(boxes.len(), fg_probs.len());
    let sign = |d: f64| {
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    boxes
        .iter()
        .zip(labels)
        .zip(fg_probs)
        .map(|((b, &y), &p)| {
            if !y {
                return [0.0; 4];
            }
            let ciou = ciou_grad(b, gt);
            let l1 = [
                sign(b.cx - gt.cx),
                sign(b.cy - gt.cy),
                sign(b.w - gt.w),
                sign(b.h - gt.h),
            ];
            let mut g = [0.0; 4];
            for k in 0..4 {
                g[k] = cfg.lambda_l1 * l1[k] + cfg.lambda_ciou * p * ciou[k];
            }
            g
        })
        .collect()
}

/// Soft-target binary cross-entropy:
/// `-Σ_j (t_j · ln(p_j) + (1-t_j) · ln(1-p_j))` with targets in [0,1].
pub fn loc_loss(loc_probs: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(loc_probs.len(), targets.len());
    let mut total = 0.0;
    for (&p, &t) in loc_probs.iter().zip(targets) {
        let p = clamp_prob(p);
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    total
}

/// Gradient of [`loc_loss`]: `(p_j - t_j) / (p_j (1 - p_j))` per entry —
/// zero exactly when the probability matches its soft target.
pub fn loc_grad(loc_probs: &[f64], targets: &[f64]) -> Vec<f64> {
    assert_eq!(loc_probs.len(), targets.len());
    loc_probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let p = clamp_prob(p);
            (p - t) / (p * (1.0 - p))
        })
        .collect()
}

/// Weighted sum of the three parts.
pub fn total_loss(cfg: &LossConfig, cls: f64, reg: f64, loc: f64) -> f64 {
    cfg.w_cls * cls + cfg.w_reg * reg + cfg.w_loc * loc
}

/// Positive/negative labels for a proposal grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetAssignment {
    /// One flag per grid cell, row-major over (row, col).
    pub labels: Vec<bool>,
    pub positives: usize,
}

/// Labels each cell of a `grid x grid` proposal lattice against a
/// normalized ground-truth box: positive iff the cell's center lies inside
/// the box (closed interval). If no center qualifies, the nearest center
/// becomes the single positive so the regression loss always has a target.
pub fn assign_targets(gt: &NormBox, grid: usize) -> Result<TargetAssignment, String> {
    if !(gt.w > 0.0 && gt.h > 0.0) {
        return Err(format!("degenerate ground-truth box {}x{}", gt.w, gt.h));
    }
    if grid == 0 {
        return Err("grid must be at least 1".into());
    }
    let x0 = gt.cx - gt.w / 2.0;
    let x1 = gt.cx + gt.w / 2.0;
    let y0 = gt.cy - gt.h / 2.0;
    let y1 = gt.cy + gt.h / 2.0;
    let mut labels = vec![false; grid * grid];
    let mut positives = 0;
    let mut nearest = (0usize, f64::INFINITY);
    for i in 0..grid {
        let cy = (i as f64 + 0.5) / grid as f64;
        for j in 0..grid {
            let cx = (j as f64 + 0.5) / grid as f64;
            let idx = i * grid + j;
            if cx >= x0 && cx <= x1 && cy >= y0 && cy <= y1 {
                labels[idx] = true;
                positives += 1;
            }
            let d2 = (cx - gt.cx).powi(2) + (cy - gt.cy).powi(2);
            if d2 < nearest.1 {
                nearest = (idx, d2);
            }
        }
    }
    if positives == 0 {
        labels[nearest.0] = true;
        positives = 1;
    }
    Ok(TargetAssignment { labels, positives })
}
