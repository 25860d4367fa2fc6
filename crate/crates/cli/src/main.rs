//! `boxkit`: command-line workbench over the box regression and suppression
//! library. Subcommands: `simulate` (gradient-descent error curves),
//! `nms` (suppress a detection file), `bench` (throughput/iteration table),
//! `verify` (randomized self-checks).
//!
//! Exit codes: 0 success, 1 file/data errors, 2 usage errors, 3 failed
//! verification properties.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use boxkit_core::io::{
    load_detections, write_records_to_path, DetectionIoError, DetectionRecord, FileFormat,
};
use boxkit_core::losses::LossKind;
use boxkit_core::nms::{NmsMethod, NmsParams, DEFAULT_BETA, DEFAULT_EPS, DEFAULT_SCORE_FLOOR, DEFAULT_SIGMA};
use boxkit_core::sim::{
    run_simulation_with_workers, write_curve_csv, write_map_csv, ScatterMode, SimulationConfig,
};
use boxkit_core::synth::{synth_channel, Layout};
use boxkit_core::verify::{run_all_checks, FaultInjection};

#[derive(Parser)]
#[command(
    name = "boxkit",
    version,
    about = "Box regression and suppression workbench"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the gradient-descent regression experiment and write error curves
    Simulate(SimulateArgs),
    /// Suppress a detection file channel by channel
    Nms(NmsArgs),
    /// Time the suppression variants and tabulate iteration counts
    Bench(BenchArgs),
    /// Run randomized self-checks
    Verify(VerifyArgs),
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    LossKind::parse(s).ok_or_else(|| "expected one of: iou, giou, diou, ciou".to_string())
}

fn parse_scatter(s: &str) -> Result<ScatterMode, String> {
    ScatterMode::parse(s).ok_or_else(|| "expected one of: uniform, sunflower".to_string())
}

fn parse_method(s: &str) -> Result<NmsMethod, String> {
    NmsMethod::parse(s).ok_or_else(|| {
        let names: Vec<&str> = NmsMethod::ALL.iter().map(|m| m.name()).collect();
        format!("expected one of: {}", names.join(", "))
    })
}

fn parse_layout(s: &str) -> Result<Layout, String> {
    Layout::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Layout::ALL.iter().map(|l| l.name()).collect();
        format!("expected one of: {}", names.join(", "))
    })
}

fn parse_format(s: &str) -> Result<FileFormat, String> {
    FileFormat::parse(s).ok_or_else(|| "expected jsonl or csv".to_string())
}

#[derive(Args)]
struct SimulateArgs {
    /// key = value config file applied before the flags below
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    /// Scattered anchor points
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    /// Descent steps per case
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, value_parser = parse_scatter)]
    scatter: Option<ScatterMode>,
    #[arg(long, env = "BOXKIT_SEED", default_value_t = 7)]
    seed: u64,
    /// Worker threads; 1 serializes the point loop (output is identical
    /// either way)
    #[arg(long)]
    workers: Option<usize>,
    /// Directory receiving curve.csv and map.csv
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct NmsArgs {
    #[arg(long, value_parser = parse_method)]
    method: NmsMethod,
    /// Suppression threshold, in (0, 1)
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    /// Gaussian width of the score-penalty variants
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    /// Distance-slack exponent of cluster-s+d
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    /// Keep floor for penalized scores
    #[arg(long, default_value_t = DEFAULT_SCORE_FLOOR)]
    score_floor: f64,
    /// Cap on matrix iterations (default: channel size)
    #[arg(long)]
    t_cap: Option<usize>,
    /// Input format override (default: by file extension)
    #[arg(long, value_parser = parse_format)]
    format: Option<FileFormat>,
    input: PathBuf,
    /// Output path; format by extension
    output: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated method list (default: all)
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<NmsMethod>>,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    /// Generate channels instead of reading a file
    #[arg(long, value_parser = parse_layout, conflicts_with = "input")]
    synthetic: Option<Layout>,
    /// Boxes per synthetic channel
    #[arg(long, default_value_t = 300)]
    n: usize,
    /// Synthetic channel count
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, env = "BOXKIT_SEED", default_value_t = 7)]
    seed: u64,
    /// Detection file to bench against (default: synthetic clustered)
    input: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, env = "BOXKIT_SEED", default_value_t = 7)]
    seed: u64,
    /// Randomized channels per check
    #[arg(long, default_value_t = 120)]
    trials: usize,
    /// Where counterexample channels are written (default: temp dir)
    #[arg(long)]
    dump_dir: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

enum CmdError {
    Io(String),
    Usage(String),
    PropertyFailure,
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Io(e.to_string())
    }
}

impl From<DetectionIoError> for CmdError {
    fn from(e: DetectionIoError) -> Self {
        CmdError::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    // default SIGPIPE disposition, so `boxkit bench | head` exits quietly
    // instead of panicking on the closed pipe
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Nms(args) => cmd_nms(args),
        Cmd::Bench(args) => cmd_bench(args),
        Cmd::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CmdError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CmdError::PropertyFailure) => ExitCode::from(3),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CmdError> {
    let mut cfg = SimulationConfig::desk_scale(LossKind::Ciou);
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        cfg.apply_kv_text(&text)
            .map_err(|e| CmdError::Io(format!("{}: {e}", path.display())))?;
    }
    if let Some(loss) = args.loss {
        cfg.loss = loss;
    }
    if let Some(points) = args.points {
        cfg.n_points = points;
    }
    if let Some(radius) = args.radius {
        cfg.radius = radius;
    }
    if let Some(iters) = args.iters {
        cfg.iterations = iters;
    }
    if let Some(scatter) = args.scatter {
        cfg.scatter = scatter;
    }
    cfg.validate().map_err(|e| CmdError::Usage(e.to_string()))?;

    let started = Instant::now();
    let report_every = (cfg.n_points / 20).max(1);
    let table = run_simulation_with_workers(&cfg, args.seed, args.workers, |done, total| {
        if done % report_every == 0 || done == total {
            eprintln!("simulate: {done}/{total} points");
        }
    });
    let elapsed = started.elapsed();

    std::fs::create_dir_all(&args.out_dir)?;
    let curve_path = args.out_dir.join("curve.csv");
    let map_path = args.out_dir.join("map.csv");
    write_curve_csv(BufWriter::new(File::create(&curve_path)?), &table)?;
    write_map_csv(BufWriter::new(File::create(&map_path)?), &table)?;

    let curve = table.error_sum_curve();
    let cases = cfg.case_count();
    println!(
        "loss={} points={} cases={} iterations={} seed={} scatter={}",
        cfg.loss,
        cfg.n_points,
        cases,
        cfg.iterations,
        args.seed,
        cfg.scatter.name()
    );
    println!(
        "error_sum first={:.6} final={:.6} final_per_case={:.8}",
        curve[0],
        curve[cfg.iterations - 1],
        curve[cfg.iterations - 1] / cases as f64
    );
    println!(
        "wrote {} and {} in {:.2}s",
        curve_path.display(),
        map_path.display(),
        elapsed.as_secs_f64()
    );
    Ok(())
}

fn validate_unit_interval(name: &str, v: f64) -> Result<(), CmdError> {
    if !(v > 0.0 && v < 1.0) {
        return Err(CmdError::Usage(format!("{name} must lie in (0, 1), got {v}")));
    }
    Ok(())
}

fn cmd_nms(args: NmsArgs) -> Result<(), CmdError> {
    validate_unit_interval("--eps", args.eps)?;
    if !(args.sigma > 0.0) {
        return Err(CmdError::Usage(format!(
            "--sigma must be positive, got {}",
            args.sigma
        )));
    }
    let params = NmsParams {
        eps: args.eps,
        sigma: args.sigma,
        beta: args.beta,
        score_floor: args.score_floor,
        t_cap: args.t_cap,
    };

    let file = load_detections(&args.input, args.format)?;
    let mut out_records: Vec<DetectionRecord> = Vec::new();
    let mut per_image: std::collections::BTreeMap<String, (usize, usize)> = Default::default();
    let mut iterations: Vec<usize> = Vec::new();
    let mut total_kept = 0usize;

    for ((image_id, class_id), set) in &file.channels {
        let result = args.method.run(set, &params);
        iterations.push(result.keep.iterations_used);
        let entry = per_image.entry(image_id.clone()).or_insert((0, 0));
        entry.1 += set.len();
        for idx in result.keep.kept_indices() {
            entry.0 += 1;
            total_kept += 1;
            let b = result.boxes[idx];
            out_records.push(DetectionRecord {
                image_id: image_id.clone(),
                class_id: *class_id,
                x1: b.x1(),
                y1: b.y1(),
                x2: b.x2(),
                y2: b.y2(),
                score: result.scores[idx],
            });
        }
    }

    write_records_to_path(&args.output, &out_records, None)?;

    for (image, (kept, total)) in &per_image {
        println!("image={image} kept={kept}/{total}");
    }
    let channels = file.channels.len();
    let (mean, median) = if iterations.is_empty() {
        (0.0, 0)
    } else {
        let mut sorted = iterations.clone();
        sorted.sort_unstable();
        (
            iterations.iter().sum::<usize>() as f64 / channels as f64,
            sorted[sorted.len() / 2],
        )
    };
    println!(
        "channels={channels} boxes={} kept={total_kept} iterations mean={mean:.2} median={median}",
        file.record_count
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), CmdError> {
    validate_unit_interval("--eps", args.eps)?;
    let methods = args.methods.unwrap_or_else(|| NmsMethod::ALL.to_vec());
    let params = NmsParams {
        eps: args.eps,
        ..NmsParams::default()
    };

    let channels: Vec<boxkit_core::DetectionSet> = if let Some(input) = &args.input {
        load_detections(input, None)?
            .channels
            .into_values()
            .collect()
    } else {
        let layout = args.synthetic.unwrap_or(Layout::Clustered);
        if args.n == 0 || args.channels == 0 {
            return Err(CmdError::Usage(
                "--n and --channels must be positive".to_string(),
            ));
        }
        (0..args.channels)
            .map(|i| synth_channel(layout, args.n, args.seed.wrapping_add(i as u64)))
            .collect()
    };
    let total_boxes: usize = channels.iter().map(|c| c.len()).sum();

    println!("method,channels,boxes,kept,mean_iterations,median_iterations,elapsed_ms,boxes_per_sec");
    for method in methods {
        let started = Instant::now();
        let mut kept = 0usize;
        let mut iterations: Vec<usize> = Vec::with_capacity(channels.len());
        for set in &channels {
            let r = method.run(set, &params);
            kept += r.keep.count();
            iterations.push(r.keep.iterations_used);
        }
        let elapsed = started.elapsed().as_secs_f64();
        iterations.sort_unstable();
        let mean = if iterations.is_empty() {
            0.0
        } else {
            iterations.iter().sum::<usize>() as f64 / iterations.len() as f64
        };
        let median = iterations.get(iterations.len() / 2).copied().unwrap_or(0);
        println!(
            "{},{},{},{},{:.3},{},{:.3},{:.0}",
            method.name(),
            channels.len(),
            total_boxes,
            kept,
            mean,
            median,
            elapsed * 1e3,
            total_boxes as f64 / elapsed.max(1e-9)
        );
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), CmdError> {
    if args.trials == 0 {
        return Err(CmdError::Usage("--trials must be positive".to_string()));
    }
    let fault = args.inject_fault.then_some(FaultInjection::FlipKeepBit);
    let outcomes = run_all_checks(args.seed, args.trials, fault);

    let dump_dir = args
        .dump_dir
        .unwrap_or_else(|| std::env::temp_dir().join("boxkit-verify"));
    let mut failed = 0usize;
    for outcome in &outcomes {
        let mut note = String::new();
        if let Some(records) = &outcome.counterexample {
            std::fs::create_dir_all(&dump_dir)?;
            let path = dump_dir.join(format!("{}.jsonl", outcome.name));
            write_records_to_path(&path, records, None)?;
            note = format!(" (channel dump: {})", path.display());
        }
        if outcome.passed {
            println!("PASS {}: {}{}", outcome.name, outcome.detail, note);
        } else {
            failed += 1;
            println!("FAIL {}: {}{}", outcome.name, outcome.detail, note);
        }
    }
    println!(
        "{} checks: {} passed, {failed} failed",
        outcomes.len(),
        outcomes.len() - failed
    );
    if failed > 0 {
        return Err(CmdError::PropertyFailure);
    }
    Ok(())
}
