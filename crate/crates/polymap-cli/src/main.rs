//! Command-line front end for the planar polygon mapping pipeline.
//!
//! Subcommands cover the single stages (`filter`, `extract`), the full
//! frame-to-map loop (`map`), synthetic data generation (`synth`) and the
//! quality and performance harnesses (`eval`, `bench`). Every command is
//! deterministic for a fixed config and seed: JSON outputs carry no wall
//! clock values, so identical invocations produce identical bytes. The
//! bench timing CSV is the one exception.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O failure, 4 malformed file,
//! 5 invalid parameters, 6 failed `--assert` check, 7 degraded input
//! (too many frames skipped).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use polymap::config::{load_config, ConfigError, PipelineConfig};
use polymap::diffusion::diffuse;
use polymap::evalbench::{
    bench_pipeline, bench_to_csv, evaluate_map, metrics_to_json, EvalError, MatchParams,
};
use polymap::imaging::{
    load_depth, load_intrinsics, load_poses, save_depth, save_intrinsics, save_poses,
    ImagingError, PoseRecord,
};
use polymap::mapman::{load_map, map_to_ply, save_map, DriftFilter, MapError, PolygonMap};
use polymap::normals::{compute_normals, write_normal_png};
use polymap::pipeline::{run_frame, FrameResult, PipelineError};
use polymap::planefit::RegionStatus;
use polymap::scenegen::{
    add_noise, ground_truth, load_ground_truth, load_scene_config, render_depth,
    save_ground_truth, RenderParams, SceneError,
};

// ---------------------------------------------------------------------------
// Failure classes and exit codes.

/// Error classes, each with its own exit code so scripts can tell I/O
/// trouble from malformed files from failed quality gates.
#[derive(Debug)]
enum Failure {
    /// Filesystem problem: missing path, permissions, short read.
    Io(String),
    /// The file was read but its contents are not in the expected format.
    Format(String),
    /// Inputs parsed fine but the parameters are rejected.
    Invalid(String),
    /// An `--assert` check failed.
    Assert(String),
    /// Outputs were written, but too much input was skipped to trust them.
    Degraded(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Io(_) => 3,
            Failure::Format(_) => 4,
            Failure::Invalid(_) => 5,
            Failure::Assert(_) => 6,
            Failure::Degraded(_) => 7,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Io(m)
            | Failure::Format(m)
            | Failure::Invalid(m)
            | Failure::Assert(m)
            | Failure::Degraded(m) => m,
        }
    }
}

impl From<ImagingError> for Failure {
    fn from(e: ImagingError) -> Self {
        match e {
            ImagingError::Io { .. } => Failure::Io(e.to_string()),
            ImagingError::Format { .. } => Failure::Format(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<SceneError> for Failure {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Io { .. } => Failure::Io(e.to_string()),
            SceneError::Config { .. } => Failure::Format(e.to_string()),
            SceneError::Imaging(inner) => inner.into(),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Io(e.to_string()),
            ConfigError::Parse { .. } => Failure::Format(e.to_string()),
            ConfigError::Invalid(_) => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<MapError> for Failure {
    fn from(e: MapError) -> Self {
        match e {
            MapError::Io { .. } => Failure::Io(e.to_string()),
            MapError::Format { .. } => Failure::Format(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Imaging(inner) => inner.into(),
            EvalError::Scene(inner) => inner.into(),
            EvalError::Pipeline(inner) => inner.into(),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Argument grammar.

#[derive(Parser)]
#[command(
    name = "polymap",
    version,
    about = "Planar polygon maps from depth images"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline parameters, TOML; omitted blocks use built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed; overrides the seeds in config and scene files.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for the parallel pipeline stages (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Comma-separated checks like `iou>=0.9` against the command's summary
    /// output; any failure exits with code 6.
    #[arg(long, global = true, value_name = "CHECKS", value_delimiter = ',')]
    assert: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Smooth a depth image with edge-preserving diffusion.
    Filter(FilterArgs),
    /// Extract planar polygons from one depth frame.
    Extract(ExtractArgs),
    /// Fuse a directory of depth frames into a polygon map.
    Map(MapArgs),
    /// Render synthetic frames, poses and ground truth from a scene file.
    Synth(SynthArgs),
    /// Score a map against ground truth.
    Eval(EvalArgs),
    /// Measure pipeline stage timings across resolutions.
    Bench(BenchArgs),
}

#[derive(Args)]
struct FilterArgs {
    /// Input depth image, 16-bit PGM or PNG holding millimeters.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Output depth image; the extension picks the format.
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
    /// Diffusion rate override, (0, 0.25].
    #[arg(long, value_name = "G")]
    gamma: Option<f64>,
    /// Edge-stopping scale override, millimeters.
    #[arg(long, value_name = "MM")]
    k: Option<f64>,
    /// Iteration count override.
    #[arg(long, value_name = "N")]
    iters: Option<usize>,
    /// Also write the post-smoothing normal image as an RGB PNG.
    #[arg(long, value_name = "FILE")]
    emit_normals: Option<PathBuf>,
    /// Camera intrinsics, required with --emit-normals.
    #[arg(long, value_name = "FILE")]
    intrinsics: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    /// Input depth frame.
    #[arg(long, value_name = "FILE")]
    depth: PathBuf,
    /// Camera intrinsics, key = value text.
    #[arg(long, value_name = "FILE")]
    intrinsics: PathBuf,
    /// Write the frame JSON here instead of stdout.
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MapArgs {
    /// Directory of depth frames named by integer timestamp.
    #[arg(long, value_name = "DIR")]
    frames: PathBuf,
    /// Camera poses, JSON lines keyed by `t`.
    #[arg(long, value_name = "FILE")]
    poses: PathBuf,
    /// Camera intrinsics, key = value text.
    #[arg(long, value_name = "FILE")]
    intrinsics: PathBuf,
    /// Merged map JSON.
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
    /// Also write the map as an ASCII PLY mesh.
    #[arg(long, value_name = "FILE")]
    ply: Option<PathBuf>,
    /// Also write one merge report per processed frame, JSON lines.
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description TOML with [camera] and [path] blocks.
    #[arg(long, value_name = "FILE")]
    scene: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Map JSON produced by `map`.
    #[arg(long, value_name = "FILE")]
    map: PathBuf,
    /// Ground-truth JSON produced by `synth`.
    #[arg(long, value_name = "FILE")]
    truth: PathBuf,
    /// Write the metrics JSON here as well as stdout.
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    /// Max angle between polygon and truth normals for a match, degrees.
    #[arg(long, value_name = "DEG")]
    normal_tol: Option<f64>,
    /// Max centroid distance to the truth plane for a match, meters.
    #[arg(long, value_name = "M")]
    offset_tol: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Scene TOML; the camera block gives the base intrinsics and the
    /// first path frame the viewpoint.
    #[arg(long, value_name = "FILE")]
    scene: PathBuf,
    /// Resolutions to test, e.g. 320x240,640x480.
    #[arg(long, value_name = "WxH", value_delimiter = ',', required = true)]
    sizes: Vec<String>,
    /// Pipeline runs per resolution; the CSV reports medians.
    #[arg(long, value_name = "N", default_value_t = 5)]
    runs: usize,
    /// Write the timing CSV here as well as stdout.
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Shared plumbing.

/// Loads the pipeline config (built-in defaults when --config is absent)
/// and applies the master seed to the one stage that draws random numbers.
fn pipeline_config(common: &Common) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.ransac.rng_seed = seed;
    }
    Ok(cfg)
}

/// Evaluates `metric<=value` style checks against a flat summary object.
fn check_asserts(checks: &[String], summary: &Value) -> Result<(), Failure> {
    let mut failures = Vec::new();
    for raw in checks {
        let expr = raw.trim();
        if expr.is_empty() {
            continue;
        }
        let (key, op, rhs) = parse_check(expr)?;
        let field = summary.get(key);
        let Some(x) = field.and_then(Value::as_f64) else {
            let why = match field {
                None => "unknown metric".into(),
                Some(Value::Null) => "metric is absent for this input".into(),
                Some(v) => format!("metric is not numeric ({v})"),
            };
            failures.push(format!("{expr}: {why}"));
            continue;
        };
        let ok = match op {
            "<=" => x <= rhs,
            ">=" => x >= rhs,
            "==" => x == rhs,
            "<" => x < rhs,
            ">" => x > rhs,
            _ => unreachable!("ops fixed by parse_check"),
        };
        if !ok {
            failures.push(format!("{expr}: actual {x}"));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assert(failures.join("; ")))
    }
}

fn parse_check(expr: &str) -> Result<(&str, &'static str, f64), Failure> {
    for op in ["<=", ">=", "==", "<", ">"] {
        let Some(i) = expr.find(op) else { continue };
        let key = expr[..i].trim();
        let num = expr[i + op.len()..].trim();
        if key.is_empty() {
            return Err(Failure::Invalid(format!("--assert `{expr}`: missing metric name")));
        }
        let rhs: f64 = num
            .parse()
            .map_err(|_| Failure::Invalid(format!("--assert `{expr}`: `{num}` is not a number")))?;
        return Ok((key, op, rhs));
    }
    Err(Failure::Invalid(format!(
        "--assert `{expr}`: expected metric<=value or metric>=value"
    )))
}

// ---------------------------------------------------------------------------
// Frame JSON (camera-frame polygons plus per-region fit diagnostics).

#[derive(Serialize)]
struct FrameJson {
    schema: u32,
    width: usize,
    height: usize,
    polygons: Vec<FramePolygonJson>,
    regions: Vec<RegionStatus>,
}

#[derive(Serialize)]
struct FramePolygonJson {
    id: usize,
    normal: [f64; 3],
    d: f64,
    centroid: [f64; 3],
    area: f64,
    inlier_fraction: f64,
    fit_error: f64,
    vertices: Vec<[f64; 3]>,
    holes: Vec<Vec<[f64; 3]>>,
}

fn frame_json(res: &FrameResult) -> FrameJson {
    let polygons = res
        .polygons
        .iter()
        .enumerate()
        .map(|(i, p)| FramePolygonJson {
            id: i,
            normal: [p.plane.normal.x, p.plane.normal.y, p.plane.normal.z],
            d: p.plane.d,
            centroid: [p.centroid.x, p.centroid.y, p.centroid.z],
            area: p.area,
            inlier_fraction: p.inlier_fraction,
            fit_error: p.fit_error,
            vertices: p.vertices.iter().map(|q| [q.x, q.y, q.z]).collect(),
            holes: p
                .holes
                .iter()
                .map(|h| h.iter().map(|q| [q.x, q.y, q.z]).collect())
                .collect(),
        })
        .collect();
    FrameJson {
        schema: 1,
        width: res.filtered.width(),
        height: res.filtered.height(),
        polygons,
        regions: res.report.statuses.clone(),
    }
}

// ---------------------------------------------------------------------------
// Commands. Each prints its primary output and returns the flat summary
// object `--assert` checks run against.

fn cmd_filter(common: &Common, args: &FilterArgs) -> Result<Value, Failure> {
    let mut cfg = pipeline_config(common)?;
    if let Some(g) = args.gamma {
        cfg.diffusion.gamma = g;
    }
    if let Some(k) = args.k {
        cfg.diffusion.k = k;
    }
    if let Some(n) = args.iters {
        cfg.diffusion.iterations = n;
    }
    cfg.validate()?;
    let depth = load_depth(&args.input)?;
    let smoothed = diffuse(&depth, &cfg.diffusion).map_err(|e| Failure::Invalid(e.to_string()))?;
    save_depth(&smoothed, &args.output)?;
    if let Some(normals_path) = &args.emit_normals {
        let Some(kpath) = &args.intrinsics else {
            return Err(Failure::Invalid("--emit-normals needs --intrinsics".into()));
        };
        let k = load_intrinsics(kpath)?;
        let normals = compute_normals(&smoothed, &k, cfg.normals.mode)
            .map_err(|e| Failure::Invalid(e.to_string()))?;
        write_normal_png(&normals, normals_path)?;
    }
    let valid = smoothed.data().iter().filter(|&&z| z > 0.0).count();
    let summary = json!({
        "width": smoothed.width(),
        "height": smoothed.height(),
        "valid_pixels": valid,
    });
    println!("{summary}");
    Ok(summary)
}

fn cmd_extract(common: &Common, args: &ExtractArgs) -> Result<Value, Failure> {
    let cfg = pipeline_config(common)?;
    cfg.validate()?;
    let k = load_intrinsics(&args.intrinsics)?;
    let depth = load_depth(&args.depth)?;
    if depth.width() != k.width || depth.height() != k.height {
        return Err(Failure::Invalid(format!(
            "depth is {}x{} but intrinsics expect {}x{}",
            depth.width(),
            depth.height(),
            k.width,
            k.height
        )));
    }
    let res = run_frame(&depth, &k, &cfg)?;
    let mut text = serde_json::to_string_pretty(&frame_json(&res)).expect("frame serialize");
    text.push('\n');
    let kept = res.polygons.len();
    let summary = json!({
        "polygons": kept,
        "regions": res.report.statuses.len(),
        "dropped": res.report.statuses.len() - kept,
    });
    match &args.output {
        Some(path) => {
            write_text(path, &text)?;
            println!("{summary}");
        }
        None => print!("{text}"),
    }
    Ok(summary)
}

/// Depth files named `<integer>.pgm` / `<integer>.png`, sorted by timestamp.
fn list_frames(dir: &Path) -> Result<Vec<(u64, PathBuf)>, Failure> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    let mut frames = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        let path = entry.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("pgm") | Some("png")) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        match stem.parse::<u64>() {
            Ok(t) => frames.push((t, path)),
            Err(_) => eprintln!(
                "warning: ignoring {} (name is not an integer timestamp)",
                path.display()
            ),
        }
    }
    frames.sort_by_key(|&(t, _)| t);
    Ok(frames)
}

fn cmd_map(common: &Common, args: &MapArgs) -> Result<Value, Failure> {
    let cfg = pipeline_config(common)?;
    cfg.validate()?;
    let k = load_intrinsics(&args.intrinsics)?;
    let poses = load_poses(&args.poses)?;
    let frames = list_frames(&args.frames)?;
    if frames.is_empty() {
        return Err(Failure::Invalid(format!(
            "no depth frames in {}",
            args.frames.display()
        )));
    }
    let mut map = PolygonMap::new(cfg.merge, DriftFilter::default())?;
    let mut log_lines = String::new();
    let mut skipped = 0usize;
    for &(t, ref path) in &frames {
        let Some((_, pose)) = poses.iter().find(|(pt, _)| (pt - t as f64).abs() < 1e-6) else {
            eprintln!("warning: no pose for t={t}, skipping {}", path.display());
            skipped += 1;
            continue;
        };
        let depth = load_depth(path)?;
        let res = run_frame(&depth, &k, &cfg)?;
        let report = map.merge_frame(&res.polygons, pose)?;
        if args.log.is_some() {
            log_lines.push_str(&serde_json::to_string(&report).expect("report serialize"));
            log_lines.push('\n');
        }
    }
    save_map(&map, &args.output)?;
    if let Some(path) = &args.ply {
        write_text(path, &map_to_ply(&map))?;
    }
    if let Some(path) = &args.log {
        write_text(path, &log_lines)?;
    }
    let summary = json!({
        "frames": frames.len(),
        "processed": frames.len() - skipped,
        "skipped": skipped,
        "polygons": map.polygons().len(),
        "x_hat": map.drift().x_hat,
    });
    println!("{summary}");
    if skipped * 10 > frames.len() {
        return Err(Failure::Degraded(format!(
            "{skipped} of {} frames had no pose",
            frames.len()
        )));
    }
    Ok(summary)
}

fn cmd_synth(common: &Common, args: &SynthArgs) -> Result<Value, Failure> {
    let sc = load_scene_config(&args.scene)?;
    let scene = sc.build_scene()?;
    let cam = sc
        .camera
        .as_ref()
        .ok_or_else(|| Failure::Invalid("scene file has no [camera] block".into()))?;
    let path = sc
        .path
        .as_ref()
        .ok_or_else(|| Failure::Invalid("scene file has no [path] block".into()))?;
    let k = cam.intrinsics()?;
    let frames = path.poses()?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::Io(format!("{}: {e}", args.out.display())))?;
    let mut noise = sc.noise;
    if let (Some(n), Some(seed)) = (&mut noise, common.seed) {
        n.seed = seed;
    }
    let mut records = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let (mut depth, _) =
            render_depth(&scene, &k, &frame.true_pose, &RenderParams::default())?;
        if let Some(base) = &noise {
            let mut per_frame = *base;
            per_frame.seed = base.seed.wrapping_add(i as u64);
            depth = add_noise(&depth, &per_frame)?;
        }
        save_depth(&depth, &args.out.join(format!("{i:06}.pgm")))?;
        records.push(PoseRecord::from_pose(i as f64, &frame.reported_pose));
    }
    save_poses(&records, &args.out.join("poses.jsonl"))?;
    save_intrinsics(&k, &args.out.join("intrinsics.txt"))?;
    // Truth covers the first view; with a static path that is exact.
    let gt = ground_truth(&scene, &k, &frames[0].true_pose)?;
    save_ground_truth(&gt, &args.out.join("truth.json"))?;
    let summary = json!({
        "frames": frames.len(),
        "truth_faces": gt.faces.len(),
    });
    println!("{summary}");
    Ok(summary)
}

fn cmd_eval(common: &Common, args: &EvalArgs) -> Result<Value, Failure> {
    let cfg = pipeline_config(common)?;
    let map = load_map(&args.map, cfg.merge)?;
    let truth = load_ground_truth(&args.truth)?;
    let mut params = MatchParams::default();
    if let Some(v) = args.normal_tol {
        params.normal_tol_deg = v;
    }
    if let Some(v) = args.offset_tol {
        params.offset_tol_m = v;
    }
    let metrics = evaluate_map(&map, &truth, &params)?;
    let text = metrics_to_json(&metrics);
    print!("{text}");
    if let Some(path) = &args.output {
        write_text(path, &text)?;
    }
    Ok(serde_json::to_value(metrics).expect("metrics to value"))
}

fn parse_size(s: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::Invalid(format!("size `{s}`: expected WxH, e.g. 640x480"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w = w.trim().parse().map_err(|_| bad())?;
    let h = h.trim().parse().map_err(|_| bad())?;
    Ok((w, h))
}

fn cmd_bench(common: &Common, args: &BenchArgs) -> Result<Value, Failure> {
    let cfg = pipeline_config(common)?;
    cfg.validate()?;
    let sc = load_scene_config(&args.scene)?;
    let scene = sc.build_scene()?;
    let cam = sc
        .camera
        .as_ref()
        .ok_or_else(|| Failure::Invalid("scene file has no [camera] block".into()))?;
    let path = sc
        .path
        .as_ref()
        .ok_or_else(|| Failure::Invalid("scene file has no [path] block".into()))?;
    let k = cam.intrinsics()?;
    let pose = path.poses()?[0].true_pose.clone();
    let sizes = args
        .sizes
        .iter()
        .map(|s| parse_size(s))
        .collect::<Result<Vec<_>, _>>()?;
    let records = bench_pipeline(&scene, &k, &pose, &cfg, &sizes, args.runs)?;
    let csv = bench_to_csv(&records);
    print!("{csv}");
    if let Some(path) = &args.output {
        write_text(path, &csv)?;
    }
    let last = records.last().expect("at least one size is required");
    Ok(serde_json::to_value(last).expect("record to value"))
}

// ---------------------------------------------------------------------------

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Invalid(format!("thread pool: {e}")))?;
    }
    let summary = match &cli.command {
        Command::Filter(args) => cmd_filter(&cli.common, args)?,
        Command::Extract(args) => cmd_extract(&cli.common, args)?,
        Command::Map(args) => cmd_map(&cli.common, args)?,
        Command::Synth(args) => cmd_synth(&cli.common, args)?,
        Command::Eval(args) => cmd_eval(&cli.common, args)?,
        Command::Bench(args) => cmd_bench(&cli.common, args)?,
    };
    check_asserts(&cli.common.assert, &summary)
}

fn main() {
    let cli = Cli::parse();
    if let Err(failure) = run(&cli) {
        eprintln!("error: {}", failure.message());
        std::process::exit(failure.code());
    }
}
