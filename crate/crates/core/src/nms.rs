//! Non-maximum suppression over one score-sorted channel of detections.
//!
//! Two routes compute the same masks: sequential greedy traversals
//! ([`sequential_nms`], [`original_nms`]) and a matrix iteration
//! ([`cluster_nms`]) that repeatedly binarizes column maxima of the
//! upper-triangular affinity matrix against the threshold. The iteration
//! reaches the sequential result in at most as many rounds as the largest
//! affinity-connected cluster, usually far fewer; capping it at one round
//! degenerates to [`fast_nms`], which may over-suppress along chains.
//!
//! On top of the plain mask the engine layers score-penalty variants
//! (Gaussian decay of each survivor's rivals, optionally slackened by center
//! distance) and coordinate-merging variants (kept boxes absorb a weighted
//! blend of what they suppressed).

use crate::geometry::{self, BBox};

pub const DEFAULT_EPS: f64 = 0.5;
pub const DEFAULT_SIGMA: f64 = 0.2;
pub const DEFAULT_BETA: f64 = 0.6;
pub const DEFAULT_SCORE_FLOOR: f64 = 0.01;

/// One scored box. `source_id` tags the detection's ingestion position so
/// outputs can be traced back to input records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub class_id: i64,
    pub source_id: usize,
}

/// A channel of detections, sorted by descending score at construction.
/// Ties keep their ingestion order (the sort is stable), so a channel is a
/// pure function of its input sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    dets: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(mut dets: Vec<Detection>) -> Self {
        assert!(
            dets.iter().all(|d| d.score.is_finite()),
            "detection scores must be finite"
        );
        dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        DetectionSet { dets }
    }

    /// Builds from parallel slices, assigning `source_id` by position.
    pub fn from_parts(boxes: &[BBox], scores: &[f64]) -> Self {
        assert_eq!(boxes.len(), scores.len());
        Self::new(
            boxes
                .iter()
                .zip(scores)
                .enumerate()
                .map(|(i, (b, s))| Detection {
                    bbox: *b,
                    score: *s,
                    class_id: 0,
                    source_id: i,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.dets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dets.is_empty()
    }

    pub fn get(&self, i: usize) -> &Detection {
        &self.dets[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Detection> {
        self.dets.iter()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.dets.iter().map(|d| d.score).collect()
    }

    pub fn boxes(&self) -> Vec<BBox> {
        self.dets.iter().map(|d| d.bbox).collect()
    }
}

/// Pairwise affinity flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffinityKind {
    /// Plain overlap.
    Iou,
    /// Overlap discounted by normalized center distance; entries can go
    /// slightly negative for far-apart pairs.
    DIou,
}

pub fn affinity(kind: AffinityKind, a: &BBox, b: &BBox) -> f64 {
    match kind {
        AffinityKind::Iou => geometry::iou(a, b),
        AffinityKind::DIou => geometry::iou(a, b) - geometry::distance_term(a, b),
    }
}

/// Upper-triangular pairwise affinities of a score-sorted channel; entries
/// at or below the diagonal are zero and not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    kind: AffinityKind,
    /// Packed rows: `(i, j)` for `i < j` at `i*n - i*(i+1)/2 + (j - i - 1)`.
    vals: Vec<f64>,
}

impl AffinityMatrix {
    pub fn build(set: &DetectionSet, kind: AffinityKind) -> Self {
        let n = set.len();
        let mut vals = vec![0.0; n * (n - 1) / 2];
        let mut k = 0;
        for i in 0..n {
            let a = &set.get(i).bbox;
            for j in i + 1..n {
                vals[k] = affinity(kind, a, &set.get(j).bbox);
                k += 1;
            }
        }
        AffinityMatrix { n, kind, vals }
    }

    /// Builds directly from explicit strictly-upper entries; anything not
    /// listed is zero. For driving the iteration with hand-picked patterns.
    pub fn from_upper_entries(n: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut m = AffinityMatrix {
            n,
            kind: AffinityKind::Iou,
            vals: vec![0.0; n * (n - 1) / 2],
        };
        for &(i, j, v) in entries {
            assert!(i < j && j < n, "entries must be strictly upper");
            let idx = m.index(i, j);
            m.vals[idx] = v;
        }
        m
    }

    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.n);
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> AffinityKind {
        self.kind
    }

    /// Entry `(i, j)`; zero on and below the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i < j && j < self.n {
            self.vals[self.index(i, j)]
        } else {
            0.0
        }
    }

    /// Strictly-upper entries of row `i` thresholded into a bitset row.
    fn binarize(&self, eps: f64) -> BitRows {
        let n = self.n;
        let words = n.div_ceil(64);
        let mut rows = vec![0u64; n * words];
        for i in 0..n {
            let base = i * words;
            for j in i + 1..n {
                if self.vals[self.index(i, j)] >= eps {
                    rows[base + j / 64] |= 1 << (j % 64);
                }
            }
        }
        BitRows { words, rows }
    }
}

/// Row-major bitset view of the thresholded matrix.
struct BitRows {
    words: usize,
    rows: Vec<u64>,
}

impl BitRows {
    fn row(&self, i: usize) -> &[u64] {
        &self.rows[i * self.words..(i + 1) * self.words]
    }
}

/// Suppression verdicts for one channel, in score order, plus the number of
/// iterations the producing traversal used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeepMask {
    pub keep: Vec<bool>,
    pub iterations_used: usize,
}

impl KeepMask {
    pub fn kept_indices(&self) -> Vec<usize> {
        self.keep
            .iter()
            .enumerate()
            .filter_map(|(i, k)| k.then_some(i))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }
}

/// Mask plus (possibly penalized) scores and (possibly merged) coordinates,
/// parallel to the channel's score order. Suppressed slots carry their
/// original score and box.
#[derive(Debug, Clone, PartialEq)]
pub struct NmsResult {
    pub keep: KeepMask,
    pub scores: Vec<f64>,
    pub boxes: Vec<BBox>,
}

impl NmsResult {
    fn plain(set: &DetectionSet, keep: KeepMask) -> Self {
        NmsResult {
            keep,
            scores: set.scores(),
            boxes: set.boxes(),
        }
    }
}

/// Greedy reference traversal: walk in score order, keep anything not yet
/// suppressed, suppress every later box whose affinity to the newly kept
/// one reaches `eps`. `iterations_used` counts the keep-rounds.
pub fn sequential_nms(set: &DetectionSet, eps: f64, kind: AffinityKind) -> KeepMask {
    let n = set.len();
    let mut keep = vec![false; n];
    let mut suppressed = vec![false; n];
    let mut rounds = 0;
    for i in 0..n {
        if suppressed[i] {
            continue;
        }
        keep[i] = true;
        rounds += 1;
        let a = &set.get(i).bbox;
        for j in i + 1..n {
            if !suppressed[j] && affinity(kind, a, &set.get(j).bbox) >= eps {
                suppressed[j] = true;
            }
        }
    }
    KeepMask {
        keep,
        iterations_used: rounds.max(1),
    }
}

/// Classic greedy suppression on plain overlap.
pub fn original_nms(set: &DetectionSet, eps: f64) -> KeepMask {
    sequential_nms(set, eps, AffinityKind::Iou)
}

/// One-shot column-max suppression: every box is tested against all
/// higher-scored boxes whether those survive or not. Equal to a single
/// matrix iteration; over-suppresses along chains.
pub fn fast_nms(set: &DetectionSet, eps: f64) -> KeepMask {
    cluster_nms(set, eps, Some(1))
}

/// Matrix-form suppression on plain overlap. Iterates
/// `b <- (column-max of rows kept by b) < eps` from the all-kept state and
/// stops at the first repeated mask; `t_cap` bounds the rounds (default: the
/// channel size). `iterations_used` is the round at which the fixed point
/// was detected (or the cap). Runs on thresholded bitset rows; exactly
/// equivalent to iterating the raw matrix.
pub fn cluster_nms(set: &DetectionSet, eps: f64, t_cap: Option<usize>) -> KeepMask {
    if set.is_empty() {
        return KeepMask {
            keep: Vec::new(),
            iterations_used: 1,
        };
    }
    let m = AffinityMatrix::build(set, AffinityKind::Iou);
    cluster_mask_binary(&m, eps, t_cap)
}

/// Matrix-form suppression on distance-discounted overlap: pairs that
/// overlap heavily but sit far apart stay below threshold and both survive.
pub fn cluster_nms_d(set: &DetectionSet, eps: f64) -> KeepMask {
    if set.is_empty() {
        return KeepMask {
            keep: Vec::new(),
            iterations_used: 1,
        };
    }
    let m = AffinityMatrix::build(set, AffinityKind::DIou);
    cluster_mask_binary(&m, eps, None)
}

fn empty_mask() -> KeepMask {
    KeepMask {
        keep: Vec::new(),
        iterations_used: 1,
    }
}

/// Bitset path: the suppressed set of the next round is the OR of the rows
/// currently kept.
fn cluster_mask_binary(m: &AffinityMatrix, eps: f64, t_cap: Option<usize>) -> KeepMask {
    let n = m.n();
    if n == 0 {
        return empty_mask();
    }
    let bits = m.binarize(eps);
    let cap = t_cap.unwrap_or(n).max(1);
    let mut keep = vec![true; n];
    let mut iterations_used = cap;
    let mut acc = vec![0u64; bits.words];
    for t in 1..=cap {
        acc.iter_mut().for_each(|w| *w = 0);
        for (i, &k) in keep.iter().enumerate() {
            if k {
                for (w, r) in acc.iter_mut().zip(bits.row(i)) {
                    *w |= r;
                }
            }
        }
        let next: Vec<bool> = (0..n).map(|j| acc[j / 64] & (1 << (j % 64)) == 0).collect();
        if next == keep {
            iterations_used = t;
            break;
        }
        keep = next;
    }
    KeepMask {
        keep,
        iterations_used,
    }
}

/// Raw-matrix path of the same iteration; kept for the penalty/merge
/// variants, which need the surviving rows' float affinities anyway.
pub fn cluster_nms_on_matrix(m: &AffinityMatrix, eps: f64, t_cap: Option<usize>) -> KeepMask {
    let n = m.n();
    if n == 0 {
        return empty_mask();
    }
    let cap = t_cap.unwrap_or(n).max(1);
    let mut keep = vec![true; n];
    let mut iterations_used = cap;
    for t in 1..=cap {
        let mut next = vec![true; n];
        for j in 0..n {
            let mut g = f64::NEG_INFINITY;
            for i in 0..j {
                if keep[i] {
                    g = g.max(m.get(i, j));
                }
            }
            next[j] = !(g >= eps);
        }
        if next == keep {
            iterations_used = t;
            break;
        }
        keep = next;
    }
    KeepMask {
        keep,
        iterations_used,
    }
}

/// Greedy traversal driven by an explicit affinity matrix instead of box
/// geometry; reference for matrix-level patterns.
pub fn sequential_nms_on_matrix(m: &AffinityMatrix, eps: f64) -> KeepMask {
    let n = m.n();
    let mut keep = vec![false; n];
    let mut suppressed = vec![false; n];
    let mut rounds = 0;
    for i in 0..n {
        if suppressed[i] {
            continue;
        }
        keep[i] = true;
        rounds += 1;
        for j in i + 1..n {
            if !suppressed[j] && m.get(i, j) >= eps {
                suppressed[j] = true;
            }
        }
    }
    KeepMask {
        keep,
        iterations_used: rounds.max(1),
    }
}

/// Score-penalty variant: run the plain iteration to its fixed point, then
/// decay every box's score by the Gaussian of each surviving rival's
/// affinity, `s_j *= prod_i exp(-x_ij^2 / sigma)` over kept rows `i < j`.
/// A box is kept iff its penalized score stays at or above `score_floor`;
/// that readmits boxes the hard mask suppressed and can drop unsuppressed
/// ones whose raw score already sat near the floor.
pub fn cluster_nms_s(set: &DetectionSet, eps: f64, sigma: f64, score_floor: f64) -> NmsResult {
    if set.is_empty() {
        return NmsResult::plain(set, empty_mask());
    }
    let m = AffinityMatrix::build(set, AffinityKind::Iou);
    let fixed = cluster_mask_binary(&m, eps, None);
    let n = set.len();
    let mut scores = set.scores();
    for j in 0..n {
        let mut sq_sum = 0.0;
        for i in 0..j {
            if fixed.keep[i] {
                let x = m.get(i, j);
                sq_sum += x * x;
            }
        }
        scores[j] *= (-sq_sum / sigma).exp();
    }
    let keep = scores.iter().map(|s| *s >= score_floor).collect();
    NmsResult {
        keep: KeepMask {
            keep,
            iterations_used: fixed.iterations_used,
        },
        scores,
        boxes: set.boxes(),
    }
}

/// Score-penalty variant with distance slack: each rival's factor is
/// `min(exp(-x_ij^2 / sigma) + d_ij^beta, 1)` where `d` is the normalized
/// center-distance term, so far-apart rivals forgive the penalty.
pub fn cluster_nms_s_d(
    set: &DetectionSet,
    eps: f64,
    sigma: f64,
    beta: f64,
    score_floor: f64,
) -> NmsResult {
    if set.is_empty() {
        return NmsResult::plain(set, empty_mask());
    }
    let m = AffinityMatrix::build(set, AffinityKind::Iou);
    let fixed = cluster_mask_binary(&m, eps, None);
    let n = set.len();
    let mut scores = set.scores();
    for j in 0..n {
        let mut penalty = 1.0;
        for i in 0..j {
            if !fixed.keep[i] {
                continue;
            }
            let x = m.get(i, j);
            if x == 0.0 {
                // factor would be min(1 + d^beta, 1) = 1
                continue;
            }
            let d = geometry::distance_term(&set.get(i).bbox, &set.get(j).bbox);
            penalty *= ((-x * x / sigma).exp() + d.powf(beta)).min(1.0);
        }
        scores[j] *= penalty;
    }
    let keep = scores.iter().map(|s| *s >= score_floor).collect();
    NmsResult {
        keep: KeepMask {
            keep,
            iterations_used: fixed.iterations_used,
        },
        scores,
        boxes: set.boxes(),
    }
}

/// Weighted average of corner coordinates. `items` are `(box, weight)`.
fn blend_boxes(items: &[(BBox, f64)]) -> BBox {
    let mut acc = [0.0; 4];
    let mut wsum = 0.0;
    for (b, w) in items {
        let (x1, y1, x2, y2) = b.corners();
        acc[0] += w * x1;
        acc[1] += w * y1;
        acc[2] += w * x2;
        acc[3] += w * y2;
        wsum += w;
    }
    BBox::from_corners(acc[0] / wsum, acc[1] / wsum, acc[2] / wsum, acc[3] / wsum)
}

/// Greedy coordinate-merging reference: each kept box absorbs the boxes it
/// suppresses in its own round, blending coordinates with weights
/// `score * affinity` (self weight: its own score). Weights and suppression
/// decisions use original coordinates; blended coordinates are output only.
pub fn weighted_nms(set: &DetectionSet, eps: f64) -> NmsResult {
    let n = set.len();
    let mut keep = vec![false; n];
    let mut suppressed = vec![false; n];
    let mut boxes = set.boxes();
    let scores = set.scores();
    let mut rounds = 0;
    for i in 0..n {
        if suppressed[i] {
            continue;
        }
        keep[i] = true;
        rounds += 1;
        let mut cluster = vec![(set.get(i).bbox, scores[i])];
        for j in i + 1..n {
            if suppressed[j] {
                continue;
            }
            let x = geometry::iou(&set.get(i).bbox, &set.get(j).bbox);
            if x >= eps {
                suppressed[j] = true;
                cluster.push((set.get(j).bbox, scores[j] * x));
            }
        }
        boxes[i] = blend_boxes(&cluster);
    }
    NmsResult {
        keep: KeepMask {
            keep,
            iterations_used: rounds.max(1),
        },
        scores,
        boxes,
    }
}

/// Matrix-form coordinate merging: run the plain iteration to its fixed
/// point, then every kept row blends all later boxes whose affinity to it
/// reaches `eps`, weighted `score * affinity` (self weight: own score).
/// Unlike the greedy reference, a suppressed box contributes to every kept
/// row it clears the threshold with, not only its first suppressor.
pub fn cluster_nms_w(set: &DetectionSet, eps: f64) -> NmsResult {
    merge_variant(set, eps, AffinityKind::Iou)
}

/// As [`cluster_nms_w`] with distance-discounted affinities driving both
/// the fixed point and the merge weights.
pub fn cluster_nms_w_d(set: &DetectionSet, eps: f64) -> NmsResult {
    merge_variant(set, eps, AffinityKind::DIou)
}

fn merge_variant(set: &DetectionSet, eps: f64, kind: AffinityKind) -> NmsResult {
    if set.is_empty() {
        return NmsResult::plain(set, empty_mask());
    }
    let m = AffinityMatrix::build(set, kind);
    let fixed = cluster_mask_binary(&m, eps, None);
    let n = set.len();
    let scores = set.scores();
    let mut boxes = set.boxes();
    for i in 0..n {
        if !fixed.keep[i] {
            continue;
        }
        let mut cluster = vec![(set.get(i).bbox, scores[i])];
        for j in i + 1..n {
            let x = m.get(i, j);
            if x >= eps {
                cluster.push((set.get(j).bbox, scores[j] * x));
            }
        }
        boxes[i] = blend_boxes(&cluster);
    }
    NmsResult {
        keep: fixed,
        scores,
        boxes,
    }
}

/// Connected components of the thresholded affinity graph (edge iff the
/// pair's entry reaches `eps`), each sorted, listed by smallest member.
pub fn cluster_components(m: &AffinityMatrix, eps: f64) -> Vec<Vec<usize>> {
    let n = m.n();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut comp = vec![start];
        let mut queue = vec![start];
        seen[start] = true;
        while let Some(i) = queue.pop() {
            for j in 0..n {
                if !seen[j] && m.get(i.min(j), i.max(j)) >= eps {
                    seen[j] = true;
                    comp.push(j);
                    queue.push(j);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Which suppression to run; every variant funnels through [`NmsMethod::run`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmsMethod {
    Original,
    Fast,
    Cluster,
    ClusterS,
    ClusterD,
    ClusterSD,
    ClusterW,
    ClusterWD,
    Weighted,
}

/// Tunables shared by the variants; fields irrelevant to a method are
/// ignored by it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsParams {
    pub eps: f64,
    pub sigma: f64,
    pub beta: f64,
    pub score_floor: f64,
    pub t_cap: Option<usize>,
}

impl Default for NmsParams {
    fn default() -> Self {
        NmsParams {
            eps: DEFAULT_EPS,
            sigma: DEFAULT_SIGMA,
            beta: DEFAULT_BETA,
            score_floor: DEFAULT_SCORE_FLOOR,
            t_cap: None,
        }
    }
}

impl NmsMethod {
    pub const ALL: [NmsMethod; 9] = [
        NmsMethod::Original,
        NmsMethod::Fast,
        NmsMethod::Cluster,
        NmsMethod::ClusterS,
        NmsMethod::ClusterD,
        NmsMethod::ClusterSD,
        NmsMethod::ClusterW,
        NmsMethod::ClusterWD,
        NmsMethod::Weighted,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            NmsMethod::Original => "original",
            NmsMethod::Fast => "fast",
            NmsMethod::Cluster => "cluster",
            NmsMethod::ClusterS => "cluster-s",
            NmsMethod::ClusterD => "cluster-d",
            NmsMethod::ClusterSD => "cluster-s+d",
            NmsMethod::ClusterW => "cluster-w",
            NmsMethod::ClusterWD => "cluster-w+d",
            NmsMethod::Weighted => "weighted",
        }
    }

    pub fn parse(s: &str) -> Option<NmsMethod> {
        NmsMethod::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
    }

    pub fn run(&self, set: &DetectionSet, p: &NmsParams) -> NmsResult {
        match self {
            NmsMethod::Original => NmsResult::plain(set, original_nms(set, p.eps)),
            NmsMethod::Fast => NmsResult::plain(set, fast_nms(set, p.eps)),
            NmsMethod::Cluster => NmsResult::plain(set, cluster_nms(set, p.eps, p.t_cap)),
            NmsMethod::ClusterS => cluster_nms_s(set, p.eps, p.sigma, p.score_floor),
            NmsMethod::ClusterD => NmsResult::plain(set, cluster_nms_d(set, p.eps)),
            NmsMethod::ClusterSD => cluster_nms_s_d(set, p.eps, p.sigma, p.beta, p.score_floor),
            NmsMethod::ClusterW => cluster_nms_w(set, p.eps),
            NmsMethod::ClusterWD => cluster_nms_w_d(set, p.eps),
            NmsMethod::Weighted => weighted_nms(set, p.eps),
        }
    }
}

impl std::fmt::Display for NmsMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bc(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::from_corners(x1, y1, x2, y2)
    }

    fn set(items: &[(BBox, f64)]) -> DetectionSet {
        let boxes: Vec<BBox> = items.iter().map(|p| p.0).collect();
        let scores: Vec<f64> = items.iter().map(|p| p.1).collect();
        DetectionSet::from_parts(&boxes, &scores)
    }

    /// Three well-separated groups of sizes 4/3/3; the first group chains so
    /// a single column-max pass over-suppresses, and two rounds settle it.
    fn three_group_channel() -> DetectionSet {
        let sq = |x: f64, cx: f64| bc(x + cx, 0.0, x + cx + 6.0, 6.0);
        set(&[
            (sq(0.0, 0.0), 0.95),
            (sq(1.8, 0.0), 0.90),
            (sq(3.6, 0.0), 0.85),
            (sq(-1.8, 0.0), 0.80),
            (sq(0.0, 50.0), 0.70),
            (sq(1.8, 50.0), 0.65),
            (sq(-1.8, 50.0), 0.60),
            (sq(0.0, 100.0), 0.55),
            (sq(1.8, 100.0), 0.50),
            (sq(-1.8, 100.0), 0.45),
        ])
    }

    #[test]
    fn detection_set_sorts_by_score_stable() {
        let a = bc(0.0, 0.0, 1.0, 1.0);
        let b = bc(10.0, 0.0, 11.0, 1.0);
        let c = bc(20.0, 0.0, 21.0, 1.0);
        let s = set(&[(a, 0.5), (b, 0.9), (c, 0.5)]);
        assert_eq!(s.get(0).source_id, 1);
        // tied scores stay in ingestion order
        assert_eq!(s.get(1).source_id, 0);
        assert_eq!(s.get(2).source_id, 2);
    }

    #[test]
    fn matrix_shape_and_flavors() {
        let a = bc(0.0, 0.0, 2.0, 2.0);
        let s1 = set(&[(a, 0.9)]);
        let m1 = AffinityMatrix::build(&s1, AffinityKind::Iou);
        assert_eq!(m1.get(0, 0), 0.0);

        let s2 = set(&[(a, 0.9), (a, 0.8)]);
        let m2 = AffinityMatrix::build(&s2, AffinityKind::Iou);
        assert_eq!(m2.get(0, 1), 1.0);
        assert_eq!(m2.get(1, 0), 0.0); // lower triangle reads as zero
        let d2 = AffinityMatrix::build(&s2, AffinityKind::DIou);
        assert_eq!(d2.get(0, 1), 1.0); // identical pair: distance 0

        let far = bc(100.0, 0.0, 102.0, 2.0);
        let s3 = set(&[(a, 0.9), (far, 0.8)]);
        let d3 = AffinityMatrix::build(&s3, AffinityKind::DIou);
        assert!(d3.get(0, 1) < 0.0); // disjoint and far: negative affinity
    }

    #[test]
    fn sequential_basics() {
        let a = bc(0.0, 0.0, 2.0, 2.0);
        let m = original_nms(&set(&[(a, 0.9)]), 0.5);
        assert_eq!(m.keep, vec![true]);
        assert_eq!(m.iterations_used, 1);

        let m2 = original_nms(&set(&[(a, 0.9), (a, 0.8)]), 0.5);
        assert_eq!(m2.keep, vec![true, false]);

        let empty = original_nms(&DetectionSet::default(), 0.5);
        assert!(empty.keep.is_empty());
        assert_eq!(empty.iterations_used, 1);
    }

    #[test]
    fn suppression_threshold_is_inclusive() {
        // IoU exactly at eps suppresses
        let a = bc(0.0, 0.0, 2.0, 1.0);
        let b = bc(0.0, 0.0, 1.0, 1.0); // IoU = 0.5
        let m = original_nms(&set(&[(a, 0.9), (b, 0.8)]), 0.5);
        assert_eq!(m.keep, vec![true, false]);
        let m2 = cluster_nms(&set(&[(a, 0.9), (b, 0.8)]), 0.5, None);
        assert_eq!(m2.keep, vec![true, false]);
    }

    #[test]
    fn disjoint_channel_settles_in_one_round() {
        let items: Vec<(BBox, f64)> = (0..6)
            .map(|i| (bc(i as f64 * 10.0, 0.0, i as f64 * 10.0 + 2.0, 2.0), 0.9 - 0.1 * i as f64))
            .collect();
        let s = set(&items);
        let m = cluster_nms(&s, 0.5, None);
        assert!(m.keep.iter().all(|k| *k));
        assert_eq!(m.iterations_used, 1);
    }

    #[test]
    fn chain_pattern_matrix_level() {
        // affinities a-b 0.6, b-c 0.6, a-c 0: greedy revives c, one-pass
        // column max kills it
        let m = AffinityMatrix::from_upper_entries(3, &[(0, 1, 0.6), (1, 2, 0.6)]);
        let seq = sequential_nms_on_matrix(&m, 0.5);
        assert_eq!(seq.keep, vec![true, false, true]);
        let one_pass = cluster_nms_on_matrix(&m, 0.5, Some(1));
        assert_eq!(one_pass.keep, vec![true, false, false]);
        let full = cluster_nms_on_matrix(&m, 0.5, None);
        assert_eq!(full.keep, seq.keep);
    }

    #[test]
    fn chain_pattern_geometric() {
        // realizable slab chain: IoU(a,b)=0.6, IoU(b,c)=0.3, IoU(a,c)=0,
        // with the top-scored box touching only the middle one
        let a = bc(0.0, 0.0, 6.0, 1.0);
        let b = bc(0.0, 0.0, 10.0, 1.0);
        let c = bc(7.0, 0.0, 10.0, 1.0);
        let s = set(&[(a, 0.9), (b, 0.8), (c, 0.7)]);
        assert_eq!(geometry::iou(&a, &b), 0.6);
        assert_eq!(geometry::iou(&b, &c), 0.3);
        assert_eq!(geometry::iou(&a, &c), 0.0);
        let seq = original_nms(&s, 0.25);
        assert_eq!(seq.keep, vec![true, false, true]);
        let fast = fast_nms(&s, 0.25);
        assert_eq!(fast.keep, vec![true, false, false]);
        let full = cluster_nms(&s, 0.25, None);
        assert_eq!(full.keep, seq.keep);
        assert!(full.iterations_used <= 3);
    }

    #[test]
    fn three_group_channel_traces() {
        let s = three_group_channel();
        let want = vec![true, false, true, false, true, false, false, true, false, false];
        let seq = original_nms(&s, 0.5);
        assert_eq!(seq.keep, want);
        // a single pass over-suppresses the chained third box
        let fast = fast_nms(&s, 0.5);
        assert_eq!(fast.keep[2], false);
        assert_eq!(fast.iterations_used, 1);
        // two rounds already match the greedy mask
        let capped = cluster_nms(&s, 0.5, Some(2));
        assert_eq!(capped.keep, want);
        // detection fires within the largest component size
        let full = cluster_nms(&s, 0.5, None);
        assert_eq!(full.keep, want);
        assert!(full.iterations_used <= 4);

        let comps = cluster_components(&AffinityMatrix::build(&s, AffinityKind::Iou), 0.5);
        let mut sizes: Vec<usize> = comps.iter().map(|c| c.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
    }

    #[test]
    fn float_and_bitset_paths_agree() {
        let s = three_group_channel();
        let m = AffinityMatrix::build(&s, AffinityKind::Iou);
        for eps in [0.3, 0.5, 0.7] {
            for cap in [Some(1), Some(2), None] {
                let a = cluster_mask_binary(&m, eps, cap);
                let b = cluster_nms_on_matrix(&m, eps, cap);
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn distance_flavor_spares_far_overlaps() {
        // overlap just above threshold, centers offset: the distance
        // discount drops the pair below eps
        let a = bc(0.0, 0.0, 6.0, 6.0);
        let b = bc(1.9, 0.0, 7.9, 6.0);
        let s = set(&[(a, 0.9), (b, 0.8)]);
        assert!(geometry::iou(&a, &b) > 0.5);
        let plain = cluster_nms(&s, 0.5, None);
        assert_eq!(plain.keep, vec![true, false]);
        let spared = cluster_nms_d(&s, 0.5);
        assert_eq!(spared.keep, vec![true, true]);
        // concentric duplicates: no distance, flavors agree
        let dup = set(&[(a, 0.9), (a, 0.8)]);
        assert_eq!(cluster_nms_d(&dup, 0.5).keep, cluster_nms(&dup, 0.5, None).keep);
    }

    #[test]
    fn score_penalty_identical_pair() {
        let a = bc(0.0, 0.0, 2.0, 2.0);
        let s = set(&[(a, 1.0), (a, 0.8)]);
        let r = cluster_nms_s(&s, 0.5, 0.2, 0.01);
        assert_eq!(r.scores[0], 1.0);
        assert!((r.scores[1] - 0.8 * (-5.0f64).exp()).abs() < 1e-15);
        // 0.0054 falls below the floor
        assert_eq!(r.keep.keep, vec![true, false]);
        // a higher floor-tolerant sigma keeps it
        let r2 = cluster_nms_s(&s, 0.5, 1e12, 0.01);
        assert!((r2.scores[1] - 0.8).abs() < 1e-9);
        assert_eq!(r2.keep.keep, vec![true, true]);
    }

    #[test]
    fn score_penalty_readmission_and_floor_drop() {
        // suppressed by the hard mask but penalized score stays above floor
        let a = bc(0.0, 0.0, 4.0, 4.0);
        let b = bc(1.0, 0.0, 5.0, 4.0); // IoU = 3/5
        let s = set(&[(a, 0.9), (b, 0.8)]);
        assert_eq!(cluster_nms(&s, 0.5, None).keep, vec![true, false]);
        let r = cluster_nms_s(&s, 0.5, 0.2, 0.01);
        // exp(-0.36/0.2) = 0.165..; 0.8 * that = 0.132 >= 0.01
        assert_eq!(r.keep.keep, vec![true, true]);
        // disjoint but negligible raw score drops through the floor
        let far = bc(50.0, 0.0, 52.0, 2.0);
        let s2 = set(&[(a, 0.9), (far, 0.005)]);
        let r2 = cluster_nms_s(&s2, 0.5, 0.2, 0.01);
        assert_eq!(r2.keep.keep, vec![true, false]);
    }

    #[test]
    fn distance_slack_clamps_to_one() {
        let a = bc(0.0, 0.0, 4.0, 4.0);
        let b = bc(1.0, 0.0, 5.0, 4.0);
        let s = set(&[(a, 0.9), (b, 0.8)]);
        // concentric-equivalent check: d=0 reduces to the plain penalty
        let dup = set(&[(a, 0.9), (a, 0.8)]);
        let plain = cluster_nms_s(&dup, 0.5, 0.2, 0.01);
        let slacked = cluster_nms_s_d(&dup, 0.5, 0.2, 0.6, 0.01);
        assert_eq!(plain.scores, slacked.scores);
        // with distance in play the penalty is never harsher
        let p = cluster_nms_s(&s, 0.5, 0.2, 0.01);
        let q = cluster_nms_s_d(&s, 0.5, 0.2, 0.6, 0.01);
        assert!(q.scores[1] >= p.scores[1]);
        assert!(q.scores[1] <= 0.8);
    }

    #[test]
    fn beta_sweep_trades_kept_count() {
        let mut items = Vec::new();
        // two crowded rows of overlapping boxes
        for i in 0..12 {
            let x = i as f64 * 0.9;
            items.push((bc(x, 0.0, x + 4.0, 4.0), 0.9 - 0.05 * i as f64));
            items.push((bc(x, 6.0, x + 4.0, 10.0), 0.88 - 0.05 * i as f64));
        }
        let s = set(&items);
        let mut kept = Vec::new();
        let mut mass = Vec::new();
        for beta in [0.3, 0.6, 0.9] {
            let r = cluster_nms_s_d(&s, 0.5, 0.2, beta, 0.01);
            kept.push(r.keep.count());
            mass.push(r.scores.iter().sum::<f64>());
        }
        // smaller beta forgives more: at least as many survivors, at least
        // as much score mass
        assert!(kept[0] >= kept[1] && kept[1] >= kept[2], "{kept:?}");
        assert!(mass[0] >= mass[1] && mass[1] >= mass[2], "{mass:?}");
    }

    #[test]
    fn weighted_two_box_merge() {
        let a = bc(0.0, 0.0, 2.0, 2.0);
        let b = bc(1.0, 0.0, 3.0, 2.0); // IoU 1/3
        let s = set(&[(a, 1.0), (b, 0.5)]);
        for r in [weighted_nms(&s, 0.3), cluster_nms_w(&s, 0.3)] {
            assert_eq!(r.keep.keep, vec![true, false]);
            let merged = r.boxes[0];
            assert!((merged.x1() - 1.0 / 7.0).abs() < 1e-15);
            assert!((merged.x2() - 15.0 / 7.0).abs() < 1e-15);
            assert_eq!(merged.y1(), 0.0);
            assert!((merged.y2() - 2.0).abs() < 1e-15);
            // scores pass through unchanged
            assert_eq!(r.scores, vec![1.0, 0.5]);
        }
    }

    #[test]
    fn merge_leaves_isolated_boxes_alone() {
        let a = bc(0.0, 0.0, 2.0, 2.0);
        let far = bc(30.0, 0.0, 32.0, 2.0);
        let s = set(&[(a, 0.9), (far, 0.8)]);
        for r in [weighted_nms(&s, 0.5), cluster_nms_w(&s, 0.5), cluster_nms_w_d(&s, 0.5)] {
            assert_eq!(r.keep.keep, vec![true, true]);
            assert_eq!(r.boxes[0], a);
            assert_eq!(r.boxes[1], far);
        }
    }

    #[test]
    fn merge_distance_flavor_matches_on_concentric_clusters() {
        let a = bc(0.0, 0.0, 4.0, 4.0);
        let s = set(&[(a, 0.9), (a, 0.7), (a, 0.5)]);
        let w = cluster_nms_w(&s, 0.5);
        let wd = cluster_nms_w_d(&s, 0.5);
        assert_eq!(w, wd);
    }

    #[test]
    fn components_extremes() {
        let a = bc(0.0, 0.0, 2.0, 2.0);
        let far: Vec<(BBox, f64)> = (0..5)
            .map(|i| (bc(i as f64 * 10.0, 0.0, i as f64 * 10.0 + 2.0, 2.0), 0.9))
            .collect();
        let s = set(&far);
        let m = AffinityMatrix::build(&s, AffinityKind::Iou);
        assert_eq!(cluster_components(&m, 0.5).len(), 5);

        let dup = set(&[(a, 0.9), (a, 0.8), (a, 0.7)]);
        let md = AffinityMatrix::build(&dup, AffinityKind::Iou);
        assert_eq!(cluster_components(&md, 0.5), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn method_dispatch_and_names() {
        for m in NmsMethod::ALL {
            assert_eq!(NmsMethod::parse(m.name()), Some(m));
        }
        assert_eq!(NmsMethod::parse("Cluster-W+D"), Some(NmsMethod::ClusterWD));
        assert_eq!(NmsMethod::parse("soft"), None);
        let s = three_group_channel();
        let p = NmsParams::default();
        for m in NmsMethod::ALL {
            let r = m.run(&s, &p);
            assert_eq!(r.keep.keep.len(), s.len());
            assert_eq!(r.scores.len(), s.len());
            assert_eq!(r.boxes.len(), s.len());
            // the top-scored box always survives
            assert!(r.keep.keep[0], "{m} dropped the top box");
        }
    }

    #[test]
    fn empty_channel_everywhere() {
        let s = DetectionSet::default();
        let p = NmsParams::default();
        for m in NmsMethod::ALL {
            let r = m.run(&s, &p);
            assert!(r.keep.keep.is_empty());
            assert_eq!(r.keep.iterations_used, 1);
        }
    }
}
