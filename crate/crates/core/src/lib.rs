//! Axis-aligned bounding-box toolkit: overlap/distance/aspect geometry, the
//! IoU-family regression losses with analytic gradients, a gradient-descent
//! regression workbench, and a matrix-form non-maximum suppression engine
//! with score-penalty and coordinate-merging variants.
//!
//! Everything is `f64` and deterministic: random paths take explicit seeds
//! and parallel reductions fold in a fixed order, so identical inputs give
//! bitwise-identical outputs at any worker count.

pub mod geometry;
pub mod io;
pub mod losses;
pub mod nms;
pub mod sim;
pub mod synth;
pub mod verify;

pub use geometry::BBox;
pub use losses::{LossEval, LossKind};
pub use nms::{AffinityKind, AffinityMatrix, Detection, DetectionSet, KeepMask, NmsResult};
