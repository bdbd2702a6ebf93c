use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use objnerf::corruption::{corrupt_dataset_masks, corrupt_dataset_poses, MaskNoiseSpec, PoseNoiseSpec};
use objnerf::datamodel::{load_dataset, save_dataset, stream, CameraIntrinsics, Pose, Raster, Rng, SceneDataset};
use objnerf::evalkit::{evaluate, render_object_view, EvalConfig, EvalView};
use objnerf::experiment::{run_cell, run_experiment, write_results_csv, CellSpec, ExperimentConfig};
use objnerf::hashfield::{read_checkpoint, write_checkpoint};
use objnerf::isolation::{build_ray_index, class_image};
use objnerf::synthscene::{four_objects, make_dataset, SceneConfig, TrajectorySpec, DEFAULT_FOCAL, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use objnerf::trainer::{train_with_index, write_trace_csv, TrainConfig};
use objnerf::Field;

#[derive(Parser, Debug)]
#[command(name = "objnerf", version, about = "Object-isolated radiance field reconstruction on synthetic tabletop scenes")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Seed for every random stream of the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON config for the command (scene, training or experiment config).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "OBJNERF_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a dataset (RGB, depth, instance masks, poses) from a scene.
    Synth(SynthArgs),
    /// Add instance-mask and/or pose noise to a dataset.
    Corrupt(CorruptArgs),
    /// Write per-frame ray class images and counts for one object.
    Classify(ClassifyArgs),
    /// Train an object field.
    Train(TrainArgs),
    /// Render depth, mask and color from a checkpoint.
    Render(RenderArgs),
    /// Score a checkpoint against a dataset's ground truth.
    Eval(EvalArgs),
    /// Run a sweep, or replay one cell from its run.json.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug, serde::Serialize)]
struct SynthArgs {
    /// Scene file (scene, camera, trajectory); built-in four objects if absent.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    /// Keep only this object and aim the cameras at it.
    #[arg(long)]
    isolate: Option<String>,
}

#[derive(Args, Debug, serde::Serialize)]
struct CorruptArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Object whose mask is corrupted (name or id); all objects if absent.
    #[arg(long)]
    object: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    mask_iou: f64,
    /// Translation noise std in meters.
    #[arg(long, default_value_t = 0.0)]
    sigma_t: f64,
    /// Rotation noise std in degrees.
    #[arg(long, default_value_t = 0.0)]
    sigma_r: f64,
}

#[derive(Args, Debug, serde::Serialize)]
struct ClassifyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    object: String,
}

#[derive(Args, Debug, serde::Serialize)]
struct TrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    object: String,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    rays: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    depth: bool,
    #[arg(long)]
    extrinsics: bool,
}

#[derive(Args, Debug, serde::Serialize)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset providing intrinsics and poses.
    #[arg(long = "in")]
    input: PathBuf,
    /// Poses written by `train`, replacing the dataset's.
    #[arg(long)]
    poses: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    #[arg(long, default_value_t = 128)]
    samples: usize,
}

#[derive(Args, Debug, serde::Serialize)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    object: String,
    #[arg(long)]
    poses: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    samples: usize,
}

#[derive(Args, Debug, serde::Serialize)]
struct ExperimentArgs {
    /// Built-in sweep: baseline, mask_noise, pose_translation, pose_rotation.
    #[arg(long)]
    preset: Option<String>,
    /// 640x480 images, 50 test views and the full training schedule.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Objects to include (comma separated names).
    #[arg(long, value_delimiter = ',')]
    objects: Vec<String>,
    /// Rerun a single cell from its run.json.
    #[arg(long)]
    replay: Option<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Corrupt(_) => "corrupt",
            Command::Classify(_) => "classify",
            Command::Train(_) => "train",
            Command::Render(_) => "render",
            Command::Eval(_) => "eval",
            Command::Experiment(_) => "experiment",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let c = &cli.common;
    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    let record = match &cli.command {
        Command::Synth(a) => synth(c, a)?,
        Command::Corrupt(a) => corrupt(c, a)?,
        Command::Classify(a) => classify(c, a)?,
        Command::Train(a) => train(c, a)?,
        Command::Render(a) => render(c, a)?,
        Command::Eval(a) => eval(c, a)?,
        Command::Experiment(a) => experiment(c, a)?,
    };
    let mut run = json!({
        "command": cli.command.name(),
        "seed": c.seed,
        "config": c.config,
        "version": env!("CARGO_PKG_VERSION"),
    });
    run["resolved"] = record;
    write_json(&c.out.join("run.json"), &run)
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)?).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load(dir: &Path) -> Result<SceneDataset> {
    load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

/// Accepts an object name or a numeric instance id.
fn object_id(ds: &SceneDataset, name: &str) -> Result<u8> {
    if let Some(o) = ds.object_by_name(name) {
        return Ok(o.id);
    }
    match name.parse::<u8>() {
        Ok(id) if ds.object(id).is_some() => Ok(id),
        _ => bail!("dataset has no object {name:?}"),
    }
}

fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    let rows: Vec<Vec<f64>> = poses.iter().map(|p| p.to_row_major().to_vec()).collect();
    write_json(path, &rows)
}

fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let rows: Vec<Vec<f64>> = read_json(path)?;
    rows.iter().map(|r| Pose::from_row_major(r).map_err(Into::into)).collect()
}

fn synth(c: &Common, a: &SynthArgs) -> Result<Value> {
    let path = a.scene.as_ref().or(c.config.as_ref());
    let mut cfg = match path {
        Some(p) => SceneConfig::load(p).with_context(|| format!("loading scene {}", p.display()))?,
        None => SceneConfig {
            scene: four_objects(),
            camera: CameraIntrinsics::centered(DEFAULT_WIDTH, DEFAULT_HEIGHT, DEFAULT_FOCAL),
            trajectory: TrajectorySpec::hemisphere([0.0; 3], 0.6, 30),
            looseness: 1.25,
        },
    };
    if let Some(name) = &a.isolate {
        let id = cfg
            .scene
            .object_ids()
            .into_iter()
            .find(|&i| cfg.scene.object_name(i) == *name || i.to_string() == *name)
            .ok_or_else(|| anyhow!("scene has no object {name:?}"))?;
        cfg.trajectory.center = cfg.scene.object_bounds(id).map(|b| b.center()).unwrap_or([0.0; 3]);
        cfg.scene = cfg.scene.isolate(id);
    }
    if let Some(n) = a.views {
        cfg.trajectory.n_views = n;
    }
    if let Some(r) = a.radius {
        cfg.trajectory.radius = r;
    }
    let mut rng = Rng::new(c.seed).fork(stream::TRAJECTORY);
    let ds = make_dataset(&cfg.scene, &cfg.camera, &cfg.trajectory, &mut rng, cfg.looseness)?;
    save_dataset(&ds, &c.out)?;
    println!("wrote {} frames to {}", ds.frames.len(), c.out.display());
    Ok(json!({ "args": a, "scene_config": cfg }))
}

fn corrupt(c: &Common, a: &CorruptArgs) -> Result<Value> {
    let mut ds = load(&a.input)?;
    let mut ious = json!({});
    if a.mask_iou < 1.0 {
        let ids: Vec<u8> = match &a.object {
            Some(n) => vec![object_id(&ds, n)?],
            None => ds.objects.iter().map(|o| o.id).collect(),
        };
        for id in ids {
            let (next, achieved) = corrupt_dataset_masks(&ds, id, &MaskNoiseSpec::new(a.mask_iou, c.seed))?;
            let mean = achieved.iter().sum::<f64>() / achieved.len().max(1) as f64;
            println!("object {id}: mean mask IoU {mean:.4} over {} frames", achieved.len());
            ious[id.to_string()] = json!(achieved);
            ds = next;
        }
    }
    if a.sigma_t > 0.0 || a.sigma_r > 0.0 {
        ds = corrupt_dataset_poses(&ds, &PoseNoiseSpec::new(a.sigma_t, a.sigma_r.to_radians(), c.seed))?;
    }
    save_dataset(&ds, &c.out)?;
    Ok(json!({ "args": a, "achieved_mask_iou": ious }))
}

fn save_rgb(r: &Raster<[u8; 3]>, path: &Path) -> Result<()> {
    let img = image::RgbImage::from_raw(r.width(), r.height(), r.data().iter().flatten().copied().collect())
        .ok_or_else(|| anyhow!("bad raster size"))?;
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

fn save_gray(w: u32, h: u32, px: Vec<u8>, path: &Path) -> Result<()> {
    let img = image::GrayImage::from_raw(w, h, px).ok_or_else(|| anyhow!("bad raster size"))?;
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

fn classify(c: &Common, a: &ClassifyArgs) -> Result<Value> {
    let ds = load(&a.input)?;
    let id = object_id(&ds, &a.object)?;
    for i in 0..ds.frames.len() {
        save_rgb(&class_image(&ds, i, id)?, &c.out.join(format!("class_{i:04}.png")))?;
    }
    let counts = build_ray_index(&ds, id)?.counts();
    println!(
        "positive {} negative {} masked {} dropped {}",
        counts.positive, counts.negative, counts.masked, counts.dropped
    );
    write_json(&c.out.join("counts.json"), &counts)?;
    Ok(json!({ "args": a, "counts": counts }))
}

fn train(c: &Common, a: &TrainArgs) -> Result<Value> {
    let ds = load(&a.input)?;
    let id = object_id(&ds, &a.object)?;
    let mut cfg: TrainConfig = match &c.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::desk(),
    };
    cfg.seed = c.seed;
    cfg.use_depth |= a.depth;
    cfg.optimize_extrinsics |= a.extrinsics;
    if let Some(n) = a.steps {
        cfg.n_steps = n;
    }
    if let Some(n) = a.rays {
        cfg.rays_per_batch = n;
    }
    if let Some(n) = a.samples {
        cfg.n_samples_per_ray = n;
    }
    let index = build_ray_index(&ds, id)?;
    let report = train_with_index(&ds, &index, &cfg)?;
    fs::write(c.out.join("field.ofp"), write_checkpoint(&report.field))?;
    write_poses(&c.out.join("poses.json"), &report.poses)?;
    write_trace_csv(&report.trace, &c.out.join("trace.csv"))?;
    let last = report.trace.last().map_or(0.0, |t| t.loss_rgb);
    println!("trained {} steps in {:.1}s, final rgb loss {last:.5}", cfg.n_steps, report.wall_s);
    Ok(json!({ "args": a, "object_id": id, "train": cfg, "counts": report.counts }))
}

fn load_field(path: &Path) -> Result<Field> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    read_checkpoint(&bytes).with_context(|| format!("parsing checkpoint {}", path.display()))
}

fn poses_for(ds: &SceneDataset, path: Option<&PathBuf>) -> Result<Vec<Pose>> {
    let poses = match path {
        Some(p) => read_poses(p)?,
        None => ds.poses(),
    };
    if poses.len() != ds.frames.len() {
        bail!("{} poses for {} frames", poses.len(), ds.frames.len());
    }
    Ok(poses)
}

fn render(c: &Common, a: &RenderArgs) -> Result<Value> {
    let field = load_field(&a.checkpoint)?;
    let ds = load(&a.input)?;
    let poses = poses_for(&ds, a.poses.as_ref())?;
    let pose = poses
        .get(a.frame)
        .ok_or_else(|| anyhow!("frame {} out of range ({} frames)", a.frame, poses.len()))?;
    let cfg = EvalConfig {
        n_samples: a.samples,
        ..EvalConfig::default()
    };
    let v = render_object_view(&field, pose, &ds.intrinsics, &cfg, None)?;
    let (w, h) = v.depth.dims();
    let far = v.depth.data().iter().copied().fold(0.0f32, f32::max).max(1e-6);
    save_gray(w, h, v.depth.data().iter().map(|&d| (d / far * 255.0).round() as u8).collect(), &c.out.join("depth.png"))?;
    save_gray(w, h, v.mask.data().iter().map(|&m| if m { 255 } else { 0 }).collect(), &c.out.join("mask.png"))?;
    save_rgb(&v.rgb, &c.out.join("rgb.png"))?;
    Ok(json!({ "args": a, "eval": cfg, "depth_png_far_m": far }))
}

fn eval(c: &Common, a: &EvalArgs) -> Result<Value> {
    let field = load_field(&a.checkpoint)?;
    let ds = load(&a.input)?;
    let id = object_id(&ds, &a.object)?;
    let poses = poses_for(&ds, a.poses.as_ref())?;
    let views = EvalView::from_dataset(&ds, id, Some(&poses));
    let cfg = EvalConfig {
        n_samples: a.samples,
        ..EvalConfig::default()
    };
    let m = evaluate(&field, &views, &cfg, None)?;
    let mut w = csv::Writer::from_path(c.out.join("metrics.csv"))?;
    w.write_record(["object", "n_views", "depth_mae_m", "mask_iou"])?;
    w.write_record([
        ds.object(id).map_or(String::new(), |o| o.name.clone()),
        views.len().to_string(),
        m.depth_mae.map_or(String::new(), |x| x.to_string()),
        m.iou.to_string(),
    ])?;
    w.flush()?;
    println!("depth MAE {:?} m, IoU {:.4}", m.depth_mae, m.iou);
    write_json(&c.out.join("metrics.json"), &m)?;
    Ok(json!({ "args": a, "object_id": id, "eval": cfg }))
}

fn experiment(c: &Common, a: &ExperimentArgs) -> Result<Value> {
    if let Some(path) = &a.replay {
        let cell: CellSpec = read_json(path)?;
        let outcome = run_cell(&cell);
        write_results_csv(&[outcome.row.clone()], &c.out.join("results.csv"))?;
        println!("{} {:?} {:?} {}", cell.object, outcome.row.depth_mae_m, outcome.row.mask_iou, outcome.row.status);
        return Ok(json!({ "args": a, "cell": cell }));
    }
    let mut cfg = match (&c.config, &a.preset) {
        (Some(p), _) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => bail!("experiment needs --config or --preset"),
    };
    if a.paper_scale {
        cfg = cfg.paper_scale();
    }
    if let Some(r) = a.repeats {
        cfg.repeats = r;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if !a.objects.is_empty() {
        cfg.objects = a.objects.clone();
    }
    cfg.base_seed = c.seed;
    cfg.out_dir = c.out.clone();
    let rows = run_experiment(&cfg)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!("{} cells, {failed} failed; results in {}", rows.len(), c.out.join("results.csv").display());
    Ok(json!({ "args": a, "experiment": cfg }))
}
