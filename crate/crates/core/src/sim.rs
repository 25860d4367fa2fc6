//! Gradient-descent regression workbench: scatter anchor centers around a
//! target location, seed anchors of several scales and aspect ratios at each
//! point, and regress every anchor onto every target shape with one of the
//! losses, recording the total L1 parameter error at each step.
//!
//! Runs are deterministic for a given config and seed: points are scattered
//! by a counter-based ChaCha stream, every case is simulated independently,
//! and per-point columns are reduced in point order regardless of worker
//! count.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::geometry::BBox;
use crate::losses::{descent_direction, LossKind};
use crate::{geometry, losses};

/// Piecewise-constant step sizes: `etas[0]` for the first `cuts[0]` fraction
/// of the run, `etas[1]` up to `cuts[1]`, `etas[2]` after.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub etas: [f64; 3],
    pub cuts: [f64; 2],
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            etas: [0.1, 0.01, 0.001],
            cuts: [0.8, 0.9],
        }
    }
}

impl LrSchedule {
    /// Step size for 1-based iteration `t` of `t_max`.
    pub fn eta(&self, t: usize, t_max: usize) -> f64 {
        let tf = t as f64;
        let tm = t_max as f64;
        if tf <= self.cuts[0] * tm {
            self.etas[0]
        } else if tf <= self.cuts[1] * tm {
            self.etas[1]
        } else {
            self.etas[2]
        }
    }
}

/// How anchor centers are placed inside the disc.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScatterMode {
    /// Seeded uniform sampling over the disc area.
    UniformDisc,
    /// Seed-free sunflower spiral, evenly spaced, for cross-platform runs.
    Sunflower,
}

impl ScatterMode {
    pub fn name(&self) -> &'static str {
        match self {
            ScatterMode::UniformDisc => "uniform",
            ScatterMode::Sunflower => "sunflower",
        }
    }

    pub fn parse(s: &str) -> Option<ScatterMode> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Some(ScatterMode::UniformDisc),
            "sunflower" => Some(ScatterMode::Sunflower),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    /// Scattered anchor locations.
    pub n_points: usize,
    /// Disc center the targets sit at.
    pub center: [f64; 2],
    /// Disc radius.
    pub radius: f64,
    /// Anchor areas seeded at every point.
    pub scales: Vec<f64>,
    /// Anchor width/height ratios at every scale.
    pub aspect_ratios: Vec<f64>,
    /// Unit-area target width/height ratios at the disc center.
    pub target_ratios: Vec<f64>,
    /// Descent steps per case.
    pub iterations: usize,
    pub schedule: LrSchedule,
    pub loss: LossKind,
    pub scatter: ScatterMode,
}

pub const DEFAULT_RATIOS: [f64; 7] = [
    0.25,
    1.0 / 3.0,
    0.5,
    1.0,
    2.0,
    3.0,
    4.0,
];
pub const DEFAULT_SCALES: [f64; 7] = [0.5, 0.67, 0.75, 1.0, 1.33, 1.5, 2.0];

impl SimulationConfig {
    /// Workbench default: 500 points, full scale/ratio grid, 200 steps.
    pub fn desk_scale(loss: LossKind) -> Self {
        SimulationConfig {
            n_points: 500,
            center: [10.0, 10.0],
            radius: 3.0,
            scales: DEFAULT_SCALES.to_vec(),
            aspect_ratios: DEFAULT_RATIOS.to_vec(),
            target_ratios: DEFAULT_RATIOS.to_vec(),
            iterations: 200,
            schedule: LrSchedule::default(),
            loss,
            scatter: ScatterMode::UniformDisc,
        }
    }

    /// Same grid at 5000 points.
    pub fn full_scale(loss: LossKind) -> Self {
        SimulationConfig {
            n_points: 5000,
            ..Self::desk_scale(loss)
        }
    }

    /// Cases per scattered point.
    pub fn cases_per_point(&self) -> usize {
        self.scales.len() * self.aspect_ratios.len() * self.target_ratios.len()
    }

    /// Total independent regression cases.
    pub fn case_count(&self) -> usize {
        self.n_points * self.cases_per_point()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_points == 0 {
            return Err(ConfigError::Invalid("n_points must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(ConfigError::Invalid("iterations must be positive".into()));
        }
        if !(self.radius > 0.0) {
            return Err(ConfigError::Invalid("radius must be positive".into()));
        }
        if self.scales.is_empty() || self.aspect_ratios.is_empty() || self.target_ratios.is_empty()
        {
            return Err(ConfigError::Invalid(
                "scales, aspect_ratios and target_ratios must be non-empty".into(),
            ));
        }
        if self
            .scales
            .iter()
            .chain(&self.aspect_ratios)
            .chain(&self.target_ratios)
            .any(|v| !(*v > 0.0) || !v.is_finite())
        {
            return Err(ConfigError::Invalid(
                "scales and ratios must be positive finite".into(),
            ));
        }
        if !(self.schedule.cuts[0] <= self.schedule.cuts[1])
            || self.schedule.cuts.iter().any(|c| !(0.0..=1.0).contains(c))
            || self.schedule.etas.iter().any(|e| !(*e > 0.0))
        {
            return Err(ConfigError::Invalid("malformed schedule".into()));
        }
        Ok(())
    }

    /// Applies `key = value` lines onto `self`. Unknown keys error; `#`
    /// starts a comment; lists are comma separated; ratios accept `a:b`.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: lineno + 1,
                message: "expected key = value".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |message: String| ConfigError::Parse {
                line: lineno + 1,
                message,
            };
            match key {
                "n_points" | "points" => {
                    self.n_points = value.parse().map_err(|e| bad(format!("{key}: {e}")))?
                }
                "radius" => self.radius = parse_num(value).map_err(bad)?,
                "center" => {
                    let parts = parse_list(value).map_err(bad)?;
                    if parts.len() != 2 {
                        return Err(bad("center needs two comma-separated values".into()));
                    }
                    self.center = [parts[0], parts[1]];
                }
                "scales" => self.scales = parse_list(value).map_err(bad)?,
                "aspect_ratios" => self.aspect_ratios = parse_ratio_list(value).map_err(bad)?,
                "target_ratios" => self.target_ratios = parse_ratio_list(value).map_err(bad)?,
                "iterations" => {
                    self.iterations = value.parse().map_err(|e| bad(format!("{key}: {e}")))?
                }
                "etas" => {
                    let parts = parse_list(value).map_err(bad)?;
                    if parts.len() != 3 {
                        return Err(bad("etas needs three values".into()));
                    }
                    self.schedule.etas = [parts[0], parts[1], parts[2]];
                }
                "cuts" => {
                    let parts = parse_list(value).map_err(bad)?;
                    if parts.len() != 2 {
                        return Err(bad("cuts needs two values".into()));
                    }
                    self.schedule.cuts = [parts[0], parts[1]];
                }
                "loss" => {
                    self.loss = LossKind::parse(value)
                        .ok_or_else(|| bad(format!("unknown loss {value:?}")))?
                }
                "scatter" => {
                    self.scatter = ScatterMode::parse(value)
                        .ok_or_else(|| bad(format!("unknown scatter mode {value:?}")))?
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        Ok(())
    }
}

fn parse_num(s: &str) -> Result<f64, String> {
    s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"))
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(parse_num).collect()
}

/// `0.5`, `1:2` and `2:1` are all valid ratio spellings.
fn parse_ratio_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|item| {
            let item = item.trim();
            if let Some((a, b)) = item.split_once(':') {
                let a = parse_num(a)?;
                let b = parse_num(b)?;
                if !(b > 0.0) {
                    return Err(format!("{item:?}: ratio denominator must be positive"));
                }
                Ok(a / b)
            } else {
                parse_num(item)
            }
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Box of area `area` and width/height ratio `ratio` centered at `point`.
pub fn anchor_box(point: [f64; 2], area: f64, ratio: f64) -> BBox {
    BBox::new(point[0], point[1], (area * ratio).sqrt(), (area / ratio).sqrt())
}

/// Unit-area box of the given ratio at `center`.
pub fn target_box(center: [f64; 2], ratio: f64) -> BBox {
    anchor_box(center, 1.0, ratio)
}

/// Anchor center locations for a config. Uniform mode draws each point from
/// its own counter-derived ChaCha stream, so point `i` is a pure function of
/// `(seed, i)`.
pub fn scatter_points(cfg: &SimulationConfig, seed: u64) -> Vec<[f64; 2]> {
    let [cx, cy] = cfg.center;
    match cfg.scatter {
        ScatterMode::UniformDisc => (0..cfg.n_points)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E3779B97F4A7C15));
                let r = cfg.radius * rng.random::<f64>().sqrt();
                let theta = std::f64::consts::TAU * rng.random::<f64>();
                [cx + r * theta.cos(), cy + r * theta.sin()]
            })
            .collect(),
        ScatterMode::Sunflower => {
            let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
            (0..cfg.n_points)
                .map(|i| {
                    let k = i as f64 + 0.5;
                    let r = cfg.radius * (k / cfg.n_points as f64).sqrt();
                    let theta = golden * i as f64;
                    [cx + r * theta.cos(), cy + r * theta.sin()]
                })
                .collect()
        }
    }
}

/// One descent update `B <- B - eta * (2 - IoU) * d` with `d` the loss's
/// regression [`descent_direction`]. The update is amplified on poorly
/// overlapping cases by the `2 - IoU` factor; dimensions are re-clamped by
/// construction.
pub fn regression_step(b: &BBox, target: &BBox, kind: LossKind, eta: f64) -> BBox {
    let d = descent_direction(kind, b, target);
    let gain = eta * (2.0 - geometry::iou(b, target));
    BBox::new(
        b.x - gain * d[0],
        b.y - gain * d[1],
        b.w - gain * d[2],
        b.h - gain * d[3],
    )
}

/// Summary of one anchor/target regression case.
#[derive(Debug, Clone, Copy)]
pub struct CaseOutcome {
    pub initial_error: f64,
    pub final_error: f64,
    pub initially_disjoint: bool,
    pub final_box: BBox,
}

/// Runs one case to completion without recording the trajectory.
pub fn run_case(
    anchor: &BBox,
    target: &BBox,
    kind: LossKind,
    iterations: usize,
    schedule: &LrSchedule,
) -> CaseOutcome {
    let initial_error = anchor.l1_distance(target);
    let initially_disjoint = geometry::intersection_area(anchor, target) == 0.0;
    let mut b = *anchor;
    for t in 1..=iterations {
        b = regression_step(&b, target, kind, schedule.eta(t, iterations));
    }
    CaseOutcome {
        initial_error,
        final_error: b.l1_distance(target),
        initially_disjoint,
        final_box: b,
    }
}

/// Accumulated L1 error, iterations down the rows, one column per scattered
/// point; entry `(t, n)` sums over every case seeded at point `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    iterations: usize,
    points: Vec<[f64; 2]>,
    cases_per_point: usize,
    /// Row-major `iterations x points.len()`.
    values: Vec<f64>,
}

impl ErrorTable {
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn cases_per_point(&self) -> usize {
        self.cases_per_point
    }

    /// Accumulated error at 1-based iteration `t` for point `n`.
    pub fn value(&self, t: usize, n: usize) -> f64 {
        assert!(t >= 1 && t <= self.iterations, "iteration out of range");
        self.values[(t - 1) * self.points.len() + n]
    }

    /// Row sums: total error across points at each iteration.
    pub fn error_sum_curve(&self) -> Vec<f64> {
        let n = self.points.len();
        (0..self.iterations)
            .map(|t| self.values[t * n..(t + 1) * n].iter().sum())
            .collect()
    }

    /// Last row: per-point accumulated error at the final iteration.
    pub fn final_errors(&self) -> Vec<f64> {
        let n = self.points.len();
        self.values[(self.iterations - 1) * n..].to_vec()
    }
}

/// Scatter points per `(point, final_error)`; pairs each scattered location
/// with its final-iteration accumulated error.
pub fn final_error_map(table: &ErrorTable) -> Vec<([f64; 2], f64)> {
    table
        .points()
        .iter()
        .copied()
        .zip(table.final_errors())
        .collect()
}

pub fn run_simulation(cfg: &SimulationConfig, seed: u64) -> ErrorTable {
    run_simulation_with_progress(cfg, seed, |_, _| {})
}

/// As [`run_simulation_with_progress`] on a dedicated pool of `workers`
/// threads (`None`: the default pool). Any worker count gives the same
/// table; one worker additionally serializes the point loop.
pub fn run_simulation_with_workers<F>(
    cfg: &SimulationConfig,
    seed: u64,
    workers: Option<usize>,
    progress: F,
) -> ErrorTable
where
    F: Fn(usize, usize) + Sync + Send,
{
    match workers {
        Some(w) if w > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .expect("worker pool")
            .install(|| run_simulation_with_progress(cfg, seed, progress)),
        _ => run_simulation_with_progress(cfg, seed, progress),
    }
}

/// As [`run_simulation`], invoking `progress(done_points, total_points)`
/// after each point column completes. Columns are computed in parallel but
/// assembled in point order, so the table is identical at any worker count.
pub fn run_simulation_with_progress<F>(cfg: &SimulationConfig, seed: u64, progress: F) -> ErrorTable
where
    F: Fn(usize, usize) + Sync,
{
    cfg.validate().expect("invalid simulation config");
    let points = scatter_points(cfg, seed);
    let total = points.len();
    let done = AtomicUsize::new(0);

    let columns: Vec<Vec<f64>> = points
        .par_iter()
        .map(|&point| {
            let mut col = vec![0.0; cfg.iterations];
            for &scale in &cfg.scales {
                for &ratio in &cfg.aspect_ratios {
                    let anchor = anchor_box(point, scale, ratio);
                    for &tratio in &cfg.target_ratios {
                        let target = target_box(cfg.center, tratio);
                        let mut b = anchor;
                        for t in 1..=cfg.iterations {
                            b = regression_step(&b, &target, cfg.loss, cfg.schedule.eta(t, cfg.iterations));
                            col[t - 1] += b.l1_distance(&target);
                        }
                    }
                }
            }
            progress(done.fetch_add(1, Ordering::Relaxed) + 1, total);
            col
        })
        .collect();

    let n = points.len();
    let mut values = vec![0.0; cfg.iterations * n];
    for (idx, col) in columns.iter().enumerate() {
        for t in 0..cfg.iterations {
            values[t * n + idx] = col[t];
        }
    }
    ErrorTable {
        iterations: cfg.iterations,
        points,
        cases_per_point: cfg.cases_per_point(),
        values,
    }
}

/// Writes `t,error_sum,error_sum_per_case` rows, one per iteration.
pub fn write_curve_csv<W: std::io::Write>(mut w: W, table: &ErrorTable) -> std::io::Result<()> {
    writeln!(w, "t,error_sum,error_sum_per_case")?;
    let cases = (table.n_points() * table.cases_per_point()) as f64;
    for (t, sum) in table.error_sum_curve().iter().enumerate() {
        writeln!(w, "{},{},{}", t + 1, sum, sum / cases)?;
    }
    Ok(())
}

/// Writes `px,py,final_error` rows, one per scattered point.
pub fn write_map_csv<W: std::io::Write>(mut w: W, table: &ErrorTable) -> std::io::Result<()> {
    writeln!(w, "px,py,final_error")?;
    for (point, err) in final_error_map(table) {
        writeln!(w, "{},{},{}", point[0], point[1], err)?;
    }
    Ok(())
}

/// Convenience: the loss value surface some tests poke at.
pub fn case_loss(kind: LossKind, anchor: &BBox, target: &BBox) -> f64 {
    losses::loss_value(kind, anchor, target)
}
