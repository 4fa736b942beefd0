//! Bounding-box geometry: IoU, the complete-IoU loss, and its analytic
//! gradient.
//!
//! Two box forms are used throughout the toolkit and conversions are always
//! explicit: [`PixelBox`] is top-left `(x, y, w, h)` in image pixels (the
//! ground-truth-file convention), [`NormBox`] is center `(cx, cy, w, h)`
//! normalized to the search window.
//!
//! The complete-IoU loss adds two penalties to `1 - IoU`: squared center
//! distance over the enclosing-box diagonal, and an aspect-ratio consistency
//! term `alpha * v` where `alpha = v / ((1 - IoU) + v)`. The gradient here
//! differentiates through *everything*, alpha included — the loss is
//! rewritten as `t + rho^2/c^2 + v^2/(t+v)` with `t = 1 - IoU`, which makes
//! the chain rule mechanical and keeps it in exact agreement with finite
//! differences.

/// Top-left pixel box `(x, y, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PixelBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Center-form box `(cx, cy, w, h)`, coordinates normalized to a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl PixelBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        PixelBox { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// All-zero boxes mark absent ground truth in benchmark files.
    pub fn is_absent(&self) -> bool {
        self.x == 0.0 && self.y == 0.0 && self.w == 0.0 && self.h == 0.0
    }

    fn corners(&self) -> (f64, f64, f64, f64) {
        (self.x, self.y, self.x + self.w, self.y + self.h)
    }

    /// Expresses this box in the normalized frame of a square window at
    /// `(origin_x, origin_y)` with the given side length.
    pub fn normalize(&self, origin_x: f64, origin_y: f64, side: f64) -> NormBox {
        let (cx, cy) = self.center();
        NormBox {
            cx: (cx - origin_x) / side,
            cy: (cy - origin_y) / side,
            w: self.w / side,
            h: self.h / side,
        }
    }
}

impl NormBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        NormBox { cx, cy, w, h }
    }

    fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Maps back to pixel coordinates of the window this box was
    /// normalized against.
    pub fn denormalize(&self, origin_x: f64, origin_y: f64, side: f64) -> PixelBox {
        PixelBox {
            x: origin_x + (self.cx - self.w / 2.0) * side,
            y: origin_y + (self.cy - self.h / 2.0) * side,
            w: self.w * side,
            h: self.h * side,
        }
    }
}

fn iou_corners(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> f64 {
    let iw = (a.2.min(b.2) - a.0.max(b.0)).max(0.0);
    let ih = (a.3.min(b.3) - a.1.max(b.1)).max(0.0);
    let inter = iw * ih;
    let union = (a.2 - a.0) * (a.3 - a.1) + (b.2 - b.0) * (b.3 - b.1) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Intersection over union of two pixel boxes; 0 when the union is empty.
pub fn iou_pixel(a: &PixelBox, b: &PixelBox) -> f64 {
    iou_corners(a.corners(), b.corners())
}

/// Intersection over union of two normalized boxes.
pub fn iou_norm(a: &NormBox, b: &NormBox) -> f64 {
    iou_corners(a.corners(), b.corners())
}

const FOUR_OVER_PI_SQ: f64 = 4.0 / (std::f64::consts::PI * std::f64::consts::PI);

/// Aspect ratio angle `atan(w/h)` with the `atan(0/0) = 0` convention for
/// fully degenerate boxes.
fn aspect_angle(w: f64, h: f64) -> f64 {
    if w == 0.0 && h == 0.0 {
        0.0
    } else {
        (w / h).atan()
    }
}

/// Complete-IoU loss: `1 - IoU + rho^2/c^2 + alpha*v`. The ground-truth box
/// must have positive extents; a fully degenerate prediction is handled with
/// IoU = 0 and a zero aspect angle.
pub fn ciou_loss(pred: &NormBox, gt: &NormBox) -> f64 {
    assert!(gt.w > 0.0 && gt.h > 0.0, "ground-truth box must have positive extents");
    let t = 1.0 - iou_norm(pred, gt);

    let dx = pred.cx - gt.cx;
    let dy = pred.cy - gt.cy;
    let rho2 = dx * dx + dy * dy;
    let (px0, py0, px1, py1) = pred.corners();
    let (gx0, gy0, gx1, gy1) = gt.corners();
    let cw = px1.max(gx1) - px0.min(gx0);
    let ch = py1.max(gy1) - py0.min(gy0);
    let c2 = cw * cw + ch * ch;
    let center_term = if c2 > 0.0 { rho2 / c2 } else { 0.0 };

    let diff = aspect_angle(gt.w, gt.h) - aspect_angle(pred.w, pred.h);
    let v = FOUR_OVER_PI_SQ * diff * diff;
    let aspect_term = if t + v > 0.0 { v * v / (t + v) } else { 0.0 };

    t + center_term + aspect_term
}

/// Analytic gradient of [`ciou_loss`] with respect to the prediction's
/// `(cx, cy, w, h)`, differentiating through the IoU, the enclosing box,
/// and the alpha coupling. At min/max ties and clamped intersections the
/// one-sided subgradient is returned; callers verifying against finite
/// differences should stay away from those kinks.
pub fn ciou_grad(pred: &NormBox, gt: &NormBox) -> [f64; 4] {
    assert!(gt.w > 0.0 && gt.h > 0.0, "ground-truth box must have positive extents");
    let (px0, py0, px1, py1) = pred.corners();
    let (gx0, gy0, gx1, gy1) = gt.corners();

    // ---- IoU and its partials ------------------------------------------
    let iw = (px1.min(gx1) - px0.max(gx0)).max(0.0);
    let ih = (py1.min(gy1) - py0.max(gy0)).max(0.0);
    let inter = iw * ih;
    let ap = pred.area();
    let union = ap + gt.area() - inter;
    let iou = if union <= 0.0 { 0.0 } else { inter / union };

    // Partial derivatives of the intersection extents. Each corner of the
    // intersection follows the prediction only when the prediction's edge
    // is the binding one.
    let (diw_dcx, diw_dw, dih_dcy, dih_dh) = if iw > 0.0 && ih > 0.0 {
        let right = if px1 < gx1 { 1.0 } else { 0.0 };
        let left = if px0 > gx0 { 1.0 } else { 0.0 };
        let bottom = if py1 < gy1 { 1.0 } else { 0.0 };
        let top = if py0 > gy0 { 1.0 } else { 0.0 };
        (
            right - left,
            0.5 * (right + left),
            bottom - top,
            0.5 * (bottom + top),
        )
    } else {
        (0.0, 0.0, 0.0, 0.0)
    };
    let di = [diw_dcx * ih, dih_dcy * iw, diw_dw * ih, dih_dh * iw]; // d inter / d(cx,cy,w,h)
    let dap = [0.0, 0.0, pred.h, pred.w];
    let mut diou = [0.0; 4];
    if union > 0.0 {
        for k in 0..4 {
            let dunion = dap[k] - di[k];
            diou[k] = (di[k] * union - inter * dunion) / (union * union);
        }
    }

    // ---- center-distance term ------------------------------------------
    let dx = pred.cx - gt.cx;
    let dy = pred.cy - gt.cy;
    let rho2 = dx * dx + dy * dy;
    let cw = px1.max(gx1) - px0.min(gx0);
    let ch = py1.max(gy1) - py0.min(gy0);
    let c2 = cw * cw + ch * ch;
    let drho2 = [2.0 * dx, 2.0 * dy, 0.0, 0.0];
    // Enclosing-box extents follow the prediction's edges only where the
    // prediction sticks out past the ground truth.
    let enc_right = if px1 > gx1 { 1.0 } else { 0.0 };
    let enc_left = if px0 < gx0 { 1.0 } else { 0.0 };
    let enc_bottom = if py1 > gy1 { 1.0 } else { 0.0 };
    let enc_top = if py0 < gy0 { 1.0 } else { 0.0 };
    let dcw = [enc_right - enc_left, 0.0, 0.5 * (enc_right + enc_left), 0.0];
    let dch = [0.0, enc_bottom - enc_top, 0.0, 0.5 * (enc_bottom + enc_top)];
    let mut dcenter = [0.0; 4];
    if c2 > 0.0 {
        for k in 0..4 {
            let dc2 = 2.0 * cw * dcw[k] + 2.0 * ch * dch[k];
            dcenter[k] = (drho2[k] * c2 - rho2 * dc2) / (c2 * c2);
        }
    }

    // ---- aspect term, differentiated through alpha -----------------------
    // loss_aspect = v^2/(t+v) with t = 1 - IoU, so
    //   d/dθ = (v^2 + 2vt)/(t+v)^2 * dv/dθ  -  v^2/(t+v)^2 * dIoU/dθ·(-1)… folded below.
    let t = 1.0 - iou;
    let a_gt = aspect_angle(gt.w, gt.h);
    let a_pred = aspect_angle(pred.w, pred.h);
    let diff = a_gt - a_pred;
    let v = FOUR_OVER_PI_SQ * diff * diff;
    let denom = pred.w * pred.w + pred.h * pred.h;
    let (dv_dw, dv_dh) = if denom > 0.0 {
        (
            -2.0 * FOUR_OVER_PI_SQ * diff * pred.h / denom,
            2.0 * FOUR_OVER_PI_SQ * diff * pred.w / denom,
        )
    } else {
        (0.0, 0.0)
    };
    let dv = [0.0, 0.0, dv_dw, dv_dh];

    let mut grad = [0.0; 4];
    if t + v > 0.0 {
        let s = t + v;
        let dloss_dv = (v * v + 2.0 * v * t) / (s * s);
        let dloss_dt = -(v * v) / (s * s); // via the quotient only; the bare t adds 1 below
        for k in 0..4 {
            grad[k] = -diou[k] // d t/dθ for the leading t
                + dcenter[k]
                + dloss_dv * dv[k]
                + dloss_dt * (-diou[k]);
        }
    } else {
        for k in 0..4 {
            grad[k] = -diou[k] + dcenter[k];
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn random_box(rng: &mut Rng) -> NormBox {
        NormBox::new(
            rng.uniform(0.2, 0.8),
            rng.uniform(0.2, 0.8),
            rng.uniform(0.05, 0.5),
            rng.uniform(0.05, 0.5),
        )
    }

    /// Straight-line reference: same definition, independently coded with
    /// explicit alpha instead of the v^2/(t+v) rewrite.
    fn ciou_reference(pred: &NormBox, gt: &NormBox) -> f64 {
        let iou = iou_norm(pred, gt);
        let rho2 = (pred.cx - gt.cx).powi(2) + (pred.cy - gt.cy).powi(2);
        let x0 = (pred.cx - pred.w / 2.0).min(gt.cx - gt.w / 2.0);
        let y0 = (pred.cy - pred.h / 2.0).min(gt.cy - gt.h / 2.0);
        let x1 = (pred.cx + pred.w / 2.0).max(gt.cx + gt.w / 2.0);
        let y1 = (pred.cy + pred.h / 2.0).max(gt.cy + gt.h / 2.0);
        let c2 = (x1 - x0).powi(2) + (y1 - y0).powi(2);
        let v = 4.0 / std::f64::consts::PI.powi(2)
            * ((gt.w / gt.h).atan() - (pred.w / pred.h).atan()).powi(2);
        let alpha = if (1.0 - iou) + v > 0.0 { v / ((1.0 - iou) + v) } else { 0.0 };
        (1.0 - iou) + rho2 / c2 + alpha * v
    }

    #[test]
    fn iou_identical_is_one() {
        let b = PixelBox::new(3.0, 4.0, 10.0, 6.0);
        assert_eq!(iou_pixel(&b, &b), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        let a = PixelBox::new(0.0, 0.0, 2.0, 2.0);
        let b = PixelBox::new(10.0, 10.0, 2.0, 2.0);
        assert_eq!(iou_pixel(&a, &b), 0.0);
    }

    #[test]
    fn iou_quarter_overlap_hand_case() {
        // inter = 1, union = 4 + 4 - 1 = 7
        let a = PixelBox::new(0.0, 0.0, 2.0, 2.0);
        let b = PixelBox::new(1.0, 1.0, 2.0, 2.0);
        assert!((iou_pixel(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn iou_degenerate_boxes_are_zero() {
        let point = PixelBox::new(1.0, 1.0, 0.0, 0.0);
        assert_eq!(iou_pixel(&point, &point), 0.0);
    }

    #[test]
    fn ciou_identical_is_exactly_zero() {
        let mut rng = Rng::new(7);
        for _ in 0..100 {
            let b = random_box(&mut rng);
            assert_eq!(ciou_loss(&b, &b), 0.0);
        }
    }

    #[test]
    fn ciou_half_size_same_center_same_aspect() {
        // IoU = 0.25, centers coincide, aspects equal -> 1 - 0.25 = 0.75
        let gt = NormBox::new(0.5, 0.5, 0.4, 0.4);
        let pred = NormBox::new(0.5, 0.5, 0.2, 0.2);
        assert!((ciou_loss(&pred, &gt) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn ciou_matches_reference_on_random_pairs() {
        let mut rng = Rng::new(31);
        for _ in 0..1000 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let got = ciou_loss(&a, &b);
            let want = ciou_reference(&a, &b);
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn ciou_degenerate_pred_is_finite() {
        let gt = NormBox::new(0.5, 0.5, 0.3, 0.3);
        let pred = NormBox::new(0.2, 0.2, 0.0, 0.0);
        let loss = ciou_loss(&pred, &gt);
        assert!(loss.is_finite());
        assert!(loss > 1.0); // IoU = 0 plus positive penalties
        assert!(ciou_grad(&pred, &gt).iter().all(|g| g.is_finite()));
    }

    #[test]
    fn ciou_grad_matches_central_differences() {
        let mut rng = Rng::new(1234);
        let h = 1e-6;
        let mut checked = 0;
        while checked < 100 {
            let pred = random_box(&mut rng);
            let gt = random_box(&mut rng);
            // Stay away from min/max kinks: an edge pair closer than 1e-4
            // makes the finite difference straddle a subgradient switch.
            let (px0, py0, px1, py1) = (
                pred.cx - pred.w / 2.0,
                pred.cy - pred.h / 2.0,
                pred.cx + pred.w / 2.0,
                pred.cy + pred.h / 2.0,
            );
            let (gx0, gy0, gx1, gy1) = (
                gt.cx - gt.w / 2.0,
                gt.cy - gt.h / 2.0,
                gt.cx + gt.w / 2.0,
                gt.cy + gt.h / 2.0,
            );
            let near_kink = [px0 - gx0, px1 - gx1, py0 - gy0, py1 - gy1]
                .iter()
                .any(|d| d.abs() < 1e-4);
            let iw = px1.min(gx1) - px0.max(gx0);
            let ih = py1.min(gy1) - py0.max(gy0);
            if near_kink || iw.abs() < 1e-4 || ih.abs() < 1e-4 {
                continue;
            }
            checked += 1;
            let analytic = ciou_grad(&pred, &gt);
            let mut coords = [pred.cx, pred.cy, pred.w, pred.h];
            for k in 0..4 {
                let orig = coords[k];
                coords[k] = orig + h;
                let up = ciou_loss(&NormBox::new(coords[0], coords[1], coords[2], coords[3]), &gt);
                coords[k] = orig - h;
                let dn = ciou_loss(&NormBox::new(coords[0], coords[1], coords[2], coords[3]), &gt);
                coords[k] = orig;
                let fd = (up - dn) / (2.0 * h);
                let denom = analytic[k].abs().max(fd.abs()).max(1e-8);
                assert!(
                    (analytic[k] - fd).abs() / denom < 1e-6,
                    "coord {k}: analytic {} vs fd {fd}",
                    analytic[k]
                );
            }
        }
    }

    #[test]
    fn pixel_norm_round_trip() {
        let b = PixelBox::new(10.0, 20.0, 30.0, 40.0);
        let n = b.normalize(5.0, 5.0, 100.0);
        let back = n.denormalize(5.0, 5.0, 100.0);
        assert!((back.x - b.x).abs() < 1e-12);
        assert!((back.y - b.y).abs() < 1e-12);
        assert!((back.w - b.w).abs() < 1e-12);
        assert!((back.h - b.h).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(
            ax in -5.0f64..5.0, ay in -5.0f64..5.0, aw in 0.0f64..6.0, ah in 0.0f64..6.0,
            bx in -5.0f64..5.0, by in -5.0f64..5.0, bw in 0.0f64..6.0, bh in 0.0f64..6.0,
        ) {
            let a = PixelBox::new(ax, ay, aw, ah);
            let b = PixelBox::new(bx, by, bw, bh);
            let ab = iou_pixel(&a, &b);
            prop_assert_eq!(ab, iou_pixel(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn ciou_is_nonnegative(
            cx in 0.1f64..0.9, cy in 0.1f64..0.9, w in 0.01f64..0.8, h in 0.01f64..0.8,
            gx in 0.1f64..0.9, gy in 0.1f64..0.9, gw in 0.01f64..0.8, gh in 0.01f64..0.8,
        ) {
            let pred = NormBox::new(cx, cy, w, h);
            let gt = NormBox::new(gx, gy, gw, gh);
            let loss = ciou_loss(&pred, &gt);
            prop_assert!(loss >= 0.0);
            prop_assert!(loss.is_finite());
        }
    }
}
