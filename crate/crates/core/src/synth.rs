//! Seeded synthetic detection channels for exercising the suppression
//! variants: scattered singletons, tight clusters, grid-disjoint layouts and
//! dense pile-ups. Generation is a pure function of `(layout, n, seed)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::BBox;
use crate::io::DetectionRecord;
use crate::nms::{Detection, DetectionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Boxes scattered uniformly over the field; overlaps are incidental.
    Uniform,
    /// A handful of cluster centers with jittered members.
    Clustered,
    /// One box per grid cell with clear margins; nothing overlaps.
    DisjointGrid,
    /// Few hotspots, many heavily overlapping boxes each.
    DenseOverlap,
}

impl Layout {
    pub const ALL: [Layout; 4] = [
        Layout::Uniform,
        Layout::Clustered,
        Layout::DisjointGrid,
        Layout::DenseOverlap,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Layout::Uniform => "uniform",
            Layout::Clustered => "clustered",
            Layout::DisjointGrid => "disjoint",
            Layout::DenseOverlap => "dense",
        }
    }

    pub fn parse(s: &str) -> Option<Layout> {
        Layout::ALL
            .into_iter()
            .find(|l| l.name() == s.trim().to_ascii_lowercase())
    }
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `n` scored boxes in the given layout.
pub fn synth_boxes(layout: Layout, n: usize, seed: u64) -> Vec<(BBox, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    match layout {
        Layout::Uniform => {
            for _ in 0..n {
                let w = rng.random_range(2.0..20.0);
                let h = rng.random_range(2.0..20.0);
                let x = rng.random_range(0.0..100.0);
                let y = rng.random_range(0.0..100.0);
                out.push((BBox::new(x, y, w, h), rng.random_range(0.05..1.0)));
            }
        }
        Layout::Clustered => {
            let k = (n / 12).max(1);
            let centers: Vec<[f64; 2]> = (0..k)
                .map(|_| [rng.random_range(10.0..90.0), rng.random_range(10.0..90.0)])
                .collect();
            for _ in 0..n {
                let c = centers[rng.random_range(0..k)];
                let x = c[0] + rng.random_range(-2.5..2.5);
                let y = c[1] + rng.random_range(-2.5..2.5);
                let w = rng.random_range(6.0..12.0);
                let h = rng.random_range(6.0..12.0);
                out.push((BBox::new(x, y, w, h), rng.random_range(0.05..1.0)));
            }
        }
        Layout::DisjointGrid => {
            let side = (n as f64).sqrt().ceil() as usize;
            for i in 0..n {
                let gx = (i % side) as f64 * 10.0;
                let gy = (i / side) as f64 * 10.0;
                let w = rng.random_range(3.0..7.0);
                let h = rng.random_range(3.0..7.0);
                out.push((
                    BBox::new(gx + 5.0, gy + 5.0, w, h),
                    rng.random_range(0.05..1.0),
                ));
            }
        }
        Layout::DenseOverlap => {
            let spots = 5.min(n.max(1));
            let centers: Vec<[f64; 2]> = (0..spots)
                .map(|_| [rng.random_range(20.0..80.0), rng.random_range(20.0..80.0)])
                .collect();
            for i in 0..n {
                let c = centers[i % spots];
                let x = c[0] + rng.random_range(-1.0..1.0);
                let y = c[1] + rng.random_range(-1.0..1.0);
                let w = 10.0 + rng.random_range(-1.5..1.5);
                let h = 10.0 + rng.random_range(-1.5..1.5);
                out.push((BBox::new(x, y, w, h), rng.random_range(0.05..1.0)));
            }
        }
    }
    out
}

/// A ready-to-suppress channel.
pub fn synth_channel(layout: Layout, n: usize, seed: u64) -> DetectionSet {
    DetectionSet::new(
        synth_boxes(layout, n, seed)
            .into_iter()
            .enumerate()
            .map(|(i, (bbox, score))| Detection {
                bbox,
                score,
                class_id: 0,
                source_id: i,
            })
            .collect(),
    )
}

/// The same boxes as writable records under one image/class key.
pub fn synth_records(layout: Layout, n: usize, seed: u64, image_id: &str, class_id: i64) -> Vec<DetectionRecord> {
    synth_boxes(layout, n, seed)
        .into_iter()
        .map(|(b, score)| DetectionRecord {
            image_id: image_id.to_string(),
            class_id,
            x1: b.x1(),
            y1: b.y1(),
            x2: b.x2(),
            y2: b.y2(),
            score,
        })
        .collect()
}
