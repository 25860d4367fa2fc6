//! The IoU-family regression losses and their analytic gradients with
//! respect to the predicted box's center-form parameters `[x, y, w, h]`.
//!
//! All four losses share the overlap core `1 - IoU`; the variants add an
//! enclosing-area penalty (GIoU), a normalized center-distance penalty
//! (DIoU), or distance plus an aspect-ratio consistency penalty (CIoU).
//!
//! Gradients are exact subgradients: the min/max kinks in the intersection
//! and enclosure are resolved by edge-binding indicators, which at ties pick
//! the symmetric subgradient. The CIoU trade-off coefficient `alpha` is
//! treated as a constant during differentiation (a stop-gradient), and
//! [`finite_diff_grad`] freezes it the same way so the two agree.
//!
//! [`descent_direction`] is the update direction for iterative box
//! regression. It additionally holds the distance penalty's normalizing
//! diagonal constant, so that term only ever moves centers; the exact
//! gradient instead also inflates the box to dilute the penalty, which
//! stalls shape convergence without lowering the final loss.

use crate::geometry::{aspect_term, iou, BBox};

const FOUR_OVER_PI_SQ: f64 = 4.0 / (std::f64::consts::PI * std::f64::consts::PI);

/// Which loss to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Iou,
    Giou,
    Diou,
    Ciou,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Iou, LossKind::Giou, LossKind::Diou, LossKind::Ciou];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Iou => "iou",
            LossKind::Giou => "giou",
            LossKind::Diou => "diou",
            LossKind::Ciou => "ciou",
        }
    }

    pub fn parse(s: &str) -> Option<LossKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "iou" => Some(LossKind::Iou),
            "giou" => Some(LossKind::Giou),
            "diou" => Some(LossKind::Diou),
            "ciou" => Some(LossKind::Ciou),
            _ => None,
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Loss value and its gradient in `[x, y, w, h]` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: [f64; 4],
}

/// Trade-off coefficient for the aspect penalty: zero below the 0.5 overlap
/// gate, `v / ((1 - iou) + v)` at or above it.
pub fn ciou_alpha(iou: f64, v: f64) -> f64 {
    if iou < 0.5 || v == 0.0 {
        0.0
    } else {
        v / ((1.0 - iou) + v)
    }
}

/// Shared differential state for one predicted/target pair.
struct Parts {
    union: f64,
    iou: f64,
    d_iou: [f64; 4],
    cw: f64,
    ch: f64,
    d_cw: [f64; 4],
    d_ch: [f64; 4],
    d_union: [f64; 4],
}

/// 1 when the first edge strictly binds, 0 when the second does, 1/2 on an
/// exact tie (the symmetric subgradient, matching central differences).
fn binds(a: f64, b: f64) -> f64 {
    if a < b {
        1.0
    } else if a > b {
        0.0
    } else {
        0.5
    }
}

fn parts(pred: &BBox, target: &BBox) -> Parts {
    let (px1, py1, px2, py2) = pred.corners();
    let (tx1, ty1, tx2, ty2) = target.corners();

    let iw = px2.min(tx2) - px1.max(tx1);
    let ih = py2.min(ty2) - py1.max(ty1);
    let overlap = iw > 0.0 && ih > 0.0;
    let inter = if overlap { iw * ih } else { 0.0 };
    let union = pred.area() + target.area() - inter;

    // Which intersection edges move with the prediction. Exact edge ties
    // split ownership, so identical boxes sit at a true stationary point.
    let d_inter = if overlap {
        let r = binds(px2, tx2);
        let l = binds(tx1, px1);
        let t = binds(py2, ty2);
        let b = binds(ty1, py1);
        [
            ih * (r - l),
            iw * (t - b),
            ih * 0.5 * (r + l),
            iw * 0.5 * (t + b),
        ]
    } else {
        [0.0; 4]
    };
    let d_union = [
        -d_inter[0],
        -d_inter[1],
        pred.h - d_inter[2],
        pred.w - d_inter[3],
    ];
    let u2 = union * union;
    let d_iou = [
        (d_inter[0] * union - inter * d_union[0]) / u2,
        (d_inter[1] * union - inter * d_union[1]) / u2,
        (d_inter[2] * union - inter * d_union[2]) / u2,
        (d_inter[3] * union - inter * d_union[3]) / u2,
    ];

    // Enclosing box spans and which of its edges the prediction owns.
    let cw = px2.max(tx2) - px1.min(tx1);
    let ch = py2.max(ty2) - py1.min(ty1);
    let r = binds(tx2, px2);
    let l = binds(px1, tx1);
    let t = binds(ty2, py2);
    let b = binds(py1, ty1);
    let d_cw = [r - l, 0.0, 0.5 * (r + l), 0.0];
    let d_ch = [0.0, t - b, 0.0, 0.5 * (t + b)];

    Parts {
        union,
        iou: inter / union,
        d_iou,
        cw,
        ch,
        d_cw,
        d_ch,
        d_union,
    }
}

/// Distance penalty `rho^2 / c^2` and its gradient, differentiated through
/// the enclosing diagonal.
fn distance_parts(p: &Parts, pred: &BBox, target: &BBox) -> (f64, [f64; 4]) {
    let c2 = p.cw * p.cw + p.ch * p.ch;
    if c2 <= 0.0 {
        return (0.0, [0.0; 4]);
    }
    let dx = pred.x - target.x;
    let dy = pred.y - target.y;
    let rho2 = dx * dx + dy * dy;
    let d_rho2 = [2.0 * dx, 2.0 * dy, 0.0, 0.0];
    let c4 = c2 * c2;
    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d_c2 = 2.0 * p.cw * p.d_cw[k] + 2.0 * p.ch * p.d_ch[k];
        grad[k] = (d_rho2[k] * c2 - rho2 * d_c2) / c4;
    }
    (rho2 / c2, grad)
}

/// `1 - IoU`.
pub fn iou_loss(pred: &BBox, target: &BBox) -> LossEval {
    let p = parts(pred, target);
    LossEval {
        value: 1.0 - p.iou,
        grad: [-p.d_iou[0], -p.d_iou[1], -p.d_iou[2], -p.d_iou[3]],
    }
}

/// `1 - IoU + (|C| - |union|) / |C|` where `C` is the enclosing box.
pub fn giou_loss(pred: &BBox, target: &BBox) -> LossEval {
    let p = parts(pred, target);
    let ac = p.cw * p.ch;
    let ac2 = ac * ac;
    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d_ac = p.ch * p.d_cw[k] + p.cw * p.d_ch[k];
        // penalty = 1 - union/ac
        let d_pen = (p.union * d_ac - ac * p.d_union[k]) / ac2;
        grad[k] = -p.d_iou[k] + d_pen;
    }
    LossEval {
        value: 1.0 - p.iou + (ac - p.union) / ac,
        grad,
    }
}

/// `1 - IoU + rho^2/c^2`.
pub fn diou_loss(pred: &BBox, target: &BBox) -> LossEval {
    let p = parts(pred, target);
    let (dist, d_dist) = distance_parts(&p, pred, target);
    let mut grad = [0.0; 4];
    for k in 0..4 {
        grad[k] = -p.d_iou[k] + d_dist[k];
    }
    LossEval {
        value: 1.0 - p.iou + dist,
        grad,
    }
}

/// d v / d[w,h]; the target ratio enters only through the angle gap.
fn aspect_grad(pred: &BBox, target: &BBox) -> [f64; 4] {
    let gap = (target.w / target.h).atan() - (pred.w / pred.h).atan();
    let denom = pred.w * pred.w + pred.h * pred.h;
    let coef = 2.0 * FOUR_OVER_PI_SQ * gap / denom;
    [0.0, 0.0, -coef * pred.h, coef * pred.w]
}

/// `1 - IoU + rho^2/c^2 + alpha * v`; reduces exactly to [`diou_loss`]
/// whenever the overlap gate keeps `alpha` at zero.
pub fn ciou_loss(pred: &BBox, target: &BBox) -> LossEval {
    let p = parts(pred, target);
    let (dist, d_dist) = distance_parts(&p, pred, target);
    let v = aspect_term(pred, target);
    let alpha = ciou_alpha(p.iou, v);
    let d_v = aspect_grad(pred, target);

    let mut grad = [0.0; 4];
    for k in 0..4 {
        grad[k] = -p.d_iou[k] + d_dist[k] + alpha * d_v[k];
    }
    LossEval {
        value: 1.0 - p.iou + dist + alpha * v,
        grad,
    }
}

/// Dispatches on [`LossKind`].
pub fn eval_loss(kind: LossKind, pred: &BBox, target: &BBox) -> LossEval {
    match kind {
        LossKind::Iou => iou_loss(pred, target),
        LossKind::Giou => giou_loss(pred, target),
        LossKind::Diou => diou_loss(pred, target),
        LossKind::Ciou => ciou_loss(pred, target),
    }
}

/// Loss value alone.
pub fn loss_value(kind: LossKind, pred: &BBox, target: &BBox) -> f64 {
    eval_loss(kind, pred, target).value
}

/// Update direction for iterative box regression under `kind`.
///
/// Matches the exact gradient except that the distance penalty's normalizing
/// diagonal is held constant, the same treatment `alpha` already gets, so
/// the distance term contributes only a center pull `2*(x - x_t)/c^2`.
/// Descending the exact gradient instead first grows the box (a larger
/// enclosure dilutes the penalty) and weakens the pull, wasting most of the
/// step budget on disjoint or shape-mismatched cases.
pub fn descent_direction(kind: LossKind, pred: &BBox, target: &BBox) -> [f64; 4] {
    match kind {
        LossKind::Iou | LossKind::Giou => eval_loss(kind, pred, target).grad,
        LossKind::Diou | LossKind::Ciou => {
            let p = parts(pred, target);
            let mut g = [-p.d_iou[0], -p.d_iou[1], -p.d_iou[2], -p.d_iou[3]];
            let c2 = p.cw * p.cw + p.ch * p.ch;
            if c2 > 0.0 {
                g[0] += 2.0 * (pred.x - target.x) / c2;
                g[1] += 2.0 * (pred.y - target.y) / c2;
            }
            if kind == LossKind::Ciou {
                let alpha = ciou_alpha(p.iou, aspect_term(pred, target));
                let d_v = aspect_grad(pred, target);
                for k in 0..4 {
                    g[k] += alpha * d_v[k];
                }
            }
            g
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FiniteDiffError {
    #[error("step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("step {step} underflows coordinate {coord} (index {index})")]
    StepUnderflow { step: f64, coord: f64, index: usize },
}

/// Central-difference gradient with per-coordinate step
/// `step * max(1, |coord|)`.
///
/// For CIoU the trade-off coefficient is frozen at the evaluation point, so
/// this differentiates the same stop-gradient objective the analytic path
/// uses. Perturbed boxes are built without the dimension floor so the
/// difference stencil stays symmetric.
pub fn finite_diff_grad(
    kind: LossKind,
    pred: &BBox,
    target: &BBox,
    step: f64,
) -> Result<[f64; 4], FiniteDiffError> {
    if !(step > 0.0) {
        return Err(FiniteDiffError::NonPositiveStep(step));
    }
    let alpha0 = match kind {
        LossKind::Ciou => ciou_alpha(iou(pred, target), aspect_term(pred, target)),
        _ => 0.0,
    };
    let frozen = |b: BBox| -> f64 {
        match kind {
            LossKind::Ciou => {
                diou_loss(&b, target).value + alpha0 * aspect_term(&b, target)
            }
            _ => loss_value(kind, &b, target),
        }
    };
    let p0 = pred.params();
    let mut grad = [0.0; 4];
    for k in 0..4 {
        let h = step * p0[k].abs().max(1.0);
        if p0[k] + h == p0[k] || p0[k] - h == p0[k] {
            return Err(FiniteDiffError::StepUnderflow {
                step,
                coord: p0[k],
                index: k,
            });
        }
        let mut hi = p0;
        let mut lo = p0;
        hi[k] += h;
        lo[k] -= h;
        let fhi = frozen(BBox {
            x: hi[0],
            y: hi[1],
            w: hi[2],
            h: hi[3],
        });
        let flo = frozen(BBox {
            x: lo[0],
            y: lo[1],
            w: lo[2],
            h: lo[3],
        });
        grad[k] = (fhi - flo) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bc(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::from_corners(x1, y1, x2, y2)
    }

    fn assert_grad_close(an: &[f64; 4], fd: &[f64; 4], tol: f64) {
        for k in 0..4 {
            let rel = (an[k] - fd[k]).abs() / an[k].abs().max(fd[k].abs()).max(1.0);
            assert!(
                rel <= tol,
                "component {k}: analytic {} vs difference {}",
                an[k],
                fd[k]
            );
        }
    }

    #[test]
    fn iou_loss_identity_is_stationary_zero() {
        let a = bc(0.0, 0.0, 2.0, 2.0);
        let e = iou_loss(&a, &a);
        assert_eq!(e.value, 0.0);
        // tie convention gives the symmetric subgradient for the centers
        assert_eq!(e.grad[0], 0.0);
        assert_eq!(e.grad[1], 0.0);
    }

    #[test]
    fn iou_loss_disjoint_plateau() {
        let a = bc(0.0, 0.0, 1.0, 1.0);
        let b = bc(5.0, 5.0, 6.0, 6.0);
        let e = iou_loss(&a, &b);
        assert_eq!(e.value, 1.0);
        assert_eq!(e.grad, [0.0; 4]);
    }

    #[test]
    fn iou_loss_partial_overlap() {
        let e = iou_loss(&bc(0.0, 0.0, 2.0, 2.0), &bc(1.0, 1.0, 3.0, 3.0));
        assert!((e.value - 6.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn giou_loss_examples() {
        let same = bc(0.0, 0.0, 2.0, 2.0);
        assert_eq!(giou_loss(&same, &same).value, 0.0);
        let e = giou_loss(&bc(0.0, 0.0, 1.0, 1.0), &bc(2.0, 0.0, 3.0, 1.0));
        assert!((e.value - 4.0 / 3.0).abs() < 1e-15);
        let e2 = giou_loss(&bc(0.0, 0.0, 2.0, 2.0), &bc(1.0, 1.0, 3.0, 3.0));
        assert!((e2.value - 68.0 / 63.0).abs() < 1e-12);
    }

    #[test]
    fn giou_loss_moves_disjoint_boxes() {
        let e = giou_loss(&bc(0.0, 0.0, 1.0, 1.0), &bc(5.0, 0.0, 6.0, 1.0));
        assert!(e.value > 1.0);
        // pulling the prediction toward the target shrinks the enclosure
        assert!(e.grad[0] < 0.0);
    }

    #[test]
    fn giou_degrades_to_iou_when_contained() {
        // prediction strictly inside the target: enclosure is the target,
        // and the penalty gradient vanishes
        let pred = bc(1.0, 1.0, 2.0, 2.0);
        let target = bc(0.0, 0.0, 4.0, 4.0);
        let g = giou_loss(&pred, &target);
        let i = iou_loss(&pred, &target);
        assert_eq!(g.value, i.value);
        assert_eq!(g.grad, i.grad);
    }

    #[test]
    fn diou_loss_examples() {
        let e = diou_loss(&bc(0.0, 0.0, 2.0, 2.0), &bc(2.0, 0.0, 4.0, 2.0));
        assert!((e.value - 1.2).abs() < 1e-15);
        // concentric pair: distance penalty is zero, value is pure overlap
        let e2 = diou_loss(&bc(-1.0, -1.0, 1.0, 1.0), &bc(-2.0, -2.0, 2.0, 2.0));
        assert!((e2.value - 0.75).abs() < 1e-15);
        // disjoint boxes still feel a pull from the distance term
        let e3 = diou_loss(&bc(0.0, 0.0, 1.0, 1.0), &bc(5.0, 0.0, 6.0, 1.0));
        assert!(e3.grad[0] < 0.0);
    }

    #[test]
    fn ciou_alpha_gate() {
        assert_eq!(ciou_alpha(0.3, 0.5), 0.0);
        assert_eq!(ciou_alpha(0.7, 0.0), 0.0);
        assert_eq!(ciou_alpha(0.5, 0.5), 0.5);
        assert!((ciou_alpha(0.9, 0.2) - 0.2 / 0.3).abs() < 1e-15);
    }

    #[test]
    fn ciou_loss_frozen_example() {
        // overlap exactly at the gate, distinct aspect ratios
        let e = ciou_loss(&bc(0.0, 0.0, 2.0, 2.0), &bc(0.0, 0.0, 2.0, 4.0));
        assert!((e.value - 0.553248129298557).abs() < 1e-14);
    }

    #[test]
    fn ciou_equals_diou_below_gate() {
        let pred = bc(0.0, 0.0, 2.0, 2.0);
        let target = bc(1.5, 1.5, 4.0, 5.0);
        assert!(iou(&pred, &target) < 0.5);
        let c = ciou_loss(&pred, &target);
        let d = diou_loss(&pred, &target);
        assert_eq!(c.value, d.value);
        assert_eq!(c.grad, d.grad);
    }

    #[test]
    fn ciou_identity_is_zero() {
        let a = bc(0.0, 0.0, 3.0, 2.0);
        let e = ciou_loss(&a, &a);
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn gradients_match_central_differences_spot_checks() {
        let pairs = [
            (bc(0.0, 0.0, 2.0, 2.0), bc(1.0, 1.0, 3.0, 3.0)),
            (bc(0.0, 0.0, 2.0, 2.0), bc(0.25, 0.25, 2.5, 2.5)),
            (bc(0.0, 0.0, 1.0, 1.0), bc(4.0, 2.0, 7.0, 3.0)),
            (bc(-1.0, -2.0, 3.0, 1.0), bc(-0.5, -1.0, 2.0, 4.0)),
            (bc(0.0, 0.0, 6.0, 1.0), bc(1.0, 0.2, 2.0, 0.8)),
        ];
        for kind in LossKind::ALL {
            for (p, t) in &pairs {
                let an = eval_loss(kind, p, t).grad;
                let fd = finite_diff_grad(kind, p, t, 1e-6).unwrap();
                assert_grad_close(&an, &fd, 1e-5);
            }
        }
    }

    #[test]
    fn descent_direction_matches_grad_for_unnormalized_losses() {
        let p = bc(0.0, 0.0, 2.0, 2.0);
        let t = bc(1.0, 1.0, 3.0, 3.0);
        for kind in [LossKind::Iou, LossKind::Giou] {
            assert_eq!(descent_direction(kind, &p, &t), eval_loss(kind, &p, &t).grad);
        }
    }

    #[test]
    fn descent_direction_is_zero_at_identity() {
        let a = bc(0.0, 0.0, 3.0, 2.0);
        for kind in LossKind::ALL {
            assert_eq!(descent_direction(kind, &a, &a), [0.0; 4]);
        }
    }

    #[test]
    fn descent_direction_moves_only_centers_when_disjoint() {
        // disjoint pair: no overlap core, so the whole direction is the
        // center pull; the exact gradient instead also inflates the box
        let p = bc(0.0, 0.0, 1.0, 1.0);
        let t = bc(5.0, 0.0, 6.0, 1.0);
        for kind in [LossKind::Diou, LossKind::Ciou] {
            let d = descent_direction(kind, &p, &t);
            assert!(d[0] < 0.0, "pull is toward the target");
            assert_eq!(d[1], 0.0);
            assert_eq!(d[2], 0.0);
            assert_eq!(d[3], 0.0);
        }
        let exact = diou_loss(&p, &t).grad;
        assert!(exact[2] < 0.0, "exact gradient grows the width");
    }

    #[test]
    fn descent_direction_ciou_collapses_to_diou_below_gate() {
        let p = bc(0.0, 0.0, 2.0, 2.0);
        let t = bc(1.5, 1.5, 4.0, 5.0);
        assert!(iou(&p, &t) < 0.5);
        assert_eq!(
            descent_direction(LossKind::Ciou, &p, &t),
            descent_direction(LossKind::Diou, &p, &t)
        );
    }

    #[test]
    fn descent_direction_keeps_aspect_push_above_gate() {
        // same center, overlapping, aspect mismatch: only the aspect term
        // distinguishes the two directions
        let p = bc(-1.0, -1.0, 1.0, 1.0);
        let t = bc(-0.8, -1.2, 0.8, 1.2);
        assert!(iou(&p, &t) >= 0.5);
        let d = descent_direction(LossKind::Diou, &p, &t);
        let c = descent_direction(LossKind::Ciou, &p, &t);
        assert_eq!(c[0], d[0]);
        assert_eq!(c[1], d[1]);
        assert!(c[2] != d[2] || c[3] != d[3]);
    }

    #[test]
    fn finite_diff_rejects_bad_steps() {
        let a = bc(0.0, 0.0, 1.0, 1.0);
        assert_eq!(
            finite_diff_grad(LossKind::Iou, &a, &a, 0.0),
            Err(FiniteDiffError::NonPositiveStep(0.0))
        );
        assert!(matches!(
            finite_diff_grad(LossKind::Iou, &a, &a, 1e-18),
            Err(FiniteDiffError::StepUnderflow { .. })
        ));
    }

    #[test]
    fn loss_kind_parse_round_trip() {
        for kind in LossKind::ALL {
            assert_eq!(LossKind::parse(kind.name()), Some(kind));
        }
        assert_eq!(LossKind::parse("CIoU"), Some(LossKind::Ciou));
        assert_eq!(LossKind::parse("smooth-l1"), None);
    }
}
