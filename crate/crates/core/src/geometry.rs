//! Box primitives and the three pairwise factors the rest of the crate is
//! built on: overlap (IoU), normalized center distance, and aspect-ratio
//! divergence.
//!
//! Boxes are stored center-form `[x, y, w, h]`. Construction clamps `w` and
//! `h` to a small positive floor so downstream ratios (`w/h`, areas in
//! denominators) stay finite; callers that need a different floor use
//! [`BBox::with_floor`].

/// Smallest width/height a box can carry after construction.
pub const DIM_FLOOR: f64 = 1e-9;

/// Axis-aligned box, center parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Builds a box from center and size, clamping `w`/`h` up to [`DIM_FLOOR`].
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::with_floor(x, y, w, h, DIM_FLOOR)
    }

    /// Same as [`BBox::new`] with an explicit dimension floor.
    pub fn with_floor(x: f64, y: f64, w: f64, h: f64, floor: f64) -> Self {
        BBox {
            x,
            y,
            w: w.max(floor),
            h: h.max(floor),
        }
    }

    /// Builds a box from corner coordinates `(x1, y1)`–`(x2, y2)`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox::new(
            0.5 * (x1 + x2),
            0.5 * (y1 + y2),
            x2 - x1,
            y2 - y1,
        )
    }

    pub fn x1(&self) -> f64 {
        self.x - 0.5 * self.w
    }

    pub fn y1(&self) -> f64 {
        self.y - 0.5 * self.h
    }

    pub fn x2(&self) -> f64 {
        self.x + 0.5 * self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + 0.5 * self.h
    }

    /// `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (self.x1(), self.y1(), self.x2(), self.y2())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Width over height.
    pub fn aspect_ratio(&self) -> f64 {
        self.w / self.h
    }

    /// Center-form components as an array, the order used by gradients.
    pub fn params(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// Componentwise L1 distance in center form.
    pub fn l1_distance(&self, other: &BBox) -> f64 {
        (self.x - other.x).abs()
            + (self.y - other.y).abs()
            + (self.w - other.w).abs()
            + (self.h - other.h).abs()
    }
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Overlap area; zero when the interiors do not intersect.
pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x2().min(b.x2()) - a.x1().max(b.x1());
    let ih = a.y2().min(b.y2()) - a.y1().max(b.y1());
    if iw > 0.0 && ih > 0.0 {
        iw * ih
    } else {
        0.0
    }
}

pub fn union_area(a: &BBox, b: &BBox) -> f64 {
    a.area() + b.area() - intersection_area(a, b)
}

/// Intersection over union, in `[0, 1]`.
///
/// Both areas at the floor is the one case where the ratio degenerates; it
/// resolves to 1 for exactly coincident boxes and 0 otherwise.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let floor_sq = DIM_FLOOR * DIM_FLOOR;
    if a.area() <= floor_sq && b.area() <= floor_sq {
        return if a == b { 1.0 } else { 0.0 };
    }
    intersection_area(a, b) / union_area(a, b)
}

/// Smallest box containing both inputs.
pub fn enclosing_box(a: &BBox, b: &BBox) -> BBox {
    BBox::from_corners(
        a.x1().min(b.x1()),
        a.y1().min(b.y1()),
        a.x2().max(b.x2()),
        a.y2().max(b.y2()),
    )
}

/// Squared center distance over squared enclosing-box diagonal, in `[0, 1)`.
///
/// Zero when the diagonal vanishes (two coincident degenerate boxes).
pub fn distance_term(a: &BBox, b: &BBox) -> f64 {
    let cw = a.x2().max(b.x2()) - a.x1().min(b.x1());
    let ch = a.y2().max(b.y2()) - a.y1().min(b.y1());
    let c2 = cw * cw + ch * ch;
    if c2 <= 0.0 {
        return 0.0;
    }
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    (dx * dx + dy * dy) / c2
}

/// Aspect-ratio divergence `(4/pi^2) * (atan(w_b/h_b) - atan(w_a/h_a))^2`,
/// in `[0, 1)` for boxes with positive dimensions.
pub fn aspect_term(a: &BBox, b: &BBox) -> f64 {
    let d = (b.w / b.h).atan() - (a.w / a.h).atan();
    (4.0 / (std::f64::consts::PI * std::f64::consts::PI)) * d * d
}
