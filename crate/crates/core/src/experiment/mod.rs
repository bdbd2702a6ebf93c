//! Sweep harness for the three studies: view count and camera distance,
//! instance-mask noise, and pose noise.

mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use plot::{line_plot_svg, Series};

use crate::corruption::{corrupt_dataset_masks, corrupt_dataset_poses, MaskNoiseSpec, PoseNoiseSpec};
use crate::datamodel::{stream, CameraIntrinsics, Rng, SceneDataset};
use crate::error::{invalid, Result};
use crate::evalkit::{evaluate, EvalConfig, EvalView, MetricsRecord};
use crate::synthscene::{
    four_objects, make_dataset, SceneConfig, SceneDescription, TrajectorySpec, DEFAULT_FOCAL, DEFAULT_HEIGHT,
    DEFAULT_WIDTH,
};
use crate::trainer::{train, TrainConfig, TrainReport};

/// Where a trained field is scored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    /// Training views whenever poses are noisy or optimized (their frame may
    /// drift), held-out views otherwise.
    #[default]
    Auto,
    Test,
    Training,
}

/// Values swept by an experiment; the cells are their Cartesian product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepAxes {
    pub n_images: Vec<usize>,
    pub radius_m: Vec<f64>,
    pub mask_iou: Vec<f64>,
    pub sigma_t_m: Vec<f64>,
    pub sigma_r_deg: Vec<f64>,
    pub use_depth: Vec<bool>,
    pub optimize_extrinsics: Vec<bool>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self {
            n_images: vec![30],
            radius_m: vec![0.6],
            mask_iou: vec![1.0],
            sigma_t_m: vec![0.0],
            sigma_r_deg: vec![0.0],
            use_depth: vec![false],
            optimize_extrinsics: vec![false],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    /// Scene file; the built-in four-object table when absent.
    pub scene: Option<PathBuf>,
    /// Object names to reconstruct; every object when empty.
    pub objects: Vec<String>,
    /// Render each object alone on the table, cameras aimed at it.
    pub isolate: bool,
    pub camera: CameraIntrinsics,
    pub looseness: f64,
    pub min_elevation: f64,
    pub sweep: SweepAxes,
    pub repeats: usize,
    pub base_seed: u64,
    pub test_views: usize,
    pub eval_split: EvalSplit,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Cells run concurrently; 0 uses the global thread pool size.
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            scene: None,
            objects: Vec::new(),
            isolate: true,
            camera: CameraIntrinsics::centered(DEFAULT_WIDTH, DEFAULT_HEIGHT, DEFAULT_FOCAL),
            looseness: 1.25,
            min_elevation: 0.0,
            sweep: SweepAxes::default(),
            repeats: 3,
            base_seed: 0,
            test_views: 10,
            eval_split: EvalSplit::Auto,
            train: TrainConfig::desk(),
            eval: EvalConfig {
                n_samples: 96,
                ..EvalConfig::default()
            },
            workers: 1,
            out_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    /// Built-in sweeps spanning the ranges of the three studies.
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            name: name.to_string(),
            ..Self::default()
        };
        let sweep = match name {
            "baseline" => SweepAxes {
                n_images: vec![10, 20, 30, 60, 100],
                radius_m: vec![0.6, 1.1],
                use_depth: vec![false, true],
                ..SweepAxes::default()
            },
            "mask_noise" => SweepAxes {
                mask_iou: vec![1.0, 0.95, 0.9, 0.85, 0.8, 0.7, 0.6],
                use_depth: vec![false, true],
                ..SweepAxes::default()
            },
            "pose_translation" => SweepAxes {
                sigma_t_m: vec![0.0, 0.005, 0.01, 0.02, 0.03, 0.04],
                use_depth: vec![true],
                optimize_extrinsics: vec![false, true],
                ..SweepAxes::default()
            },
            "pose_rotation" => SweepAxes {
                sigma_r_deg: vec![0.0, 1.0, 2.0, 3.0, 4.0, 6.0],
                use_depth: vec![true],
                optimize_extrinsics: vec![false, true],
                ..SweepAxes::default()
            },
            _ => return Err(invalid("preset", format!("unknown preset {name:?}"))),
        };
        Ok(Self { sweep, ..base })
    }

    /// Full-resolution images, 50 held-out views and the default training
    /// schedule.
    pub fn paper_scale(mut self) -> Self {
        self.camera = CameraIntrinsics::centered(640, 480, DEFAULT_FOCAL * 4.0);
        self.test_views = 50;
        self.train = TrainConfig::default();
        self.eval = EvalConfig::default();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sweep;
        let empty = s.n_images.is_empty()
            || s.radius_m.is_empty()
            || s.mask_iou.is_empty()
            || s.sigma_t_m.is_empty()
            || s.sigma_r_deg.is_empty()
            || s.use_depth.is_empty()
            || s.optimize_extrinsics.is_empty();
        if empty {
            return Err(invalid("sweep", "every axis needs at least one value"));
        }
        if self.repeats == 0 {
            return Err(invalid("repeats", "must be at least 1"));
        }
        self.camera.validate()?;
        self.train.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => crate::Error::FileNotFound(path.to_path_buf()),
            _ => e.into(),
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    fn load_scene(&self) -> Result<SceneDescription> {
        match &self.scene {
            Some(p) => Ok(SceneConfig::load(p)?.scene),
            None => Ok(four_objects()),
        }
    }

    /// Expands the sweep into independent cells, ordered object-major then
    /// by axis values, with repeats innermost.
    pub fn cells(&self) -> Result<Vec<CellSpec>> {
        self.validate()?;
        let scene = self.load_scene()?;
        scene.validate()?;
        let ids: Vec<u8> = if self.objects.is_empty() {
            scene.object_ids()
        } else {
            self.objects
                .iter()
                .map(|n| {
                    scene
                        .object_ids()
                        .into_iter()
                        .find(|&i| scene.object_name(i) == *n)
                        .ok_or_else(|| invalid("objects", format!("no object named {n:?}")))
                })
                .collect::<Result<_>>()?
        };
        let s = &self.sweep;
        let mut cells = Vec::new();
        for &id in &ids {
            for &n_images in &s.n_images {
                for &radius in &s.radius_m {
                    for &iou in &s.mask_iou {
                        for &st in &s.sigma_t_m {
                            for &sr in &s.sigma_r_deg {
                                for &depth in &s.use_depth {
                                    for &extr in &s.optimize_extrinsics {
                                        for repeat in 0..self.repeats {
                                            cells.push(CellSpec {
                                                experiment: self.name.clone(),
                                                object: scene.object_name(id),
                                                object_id: id,
                                                repeat,
                                                seed: self.base_seed.wrapping_add(repeat as u64),
                                                n_images,
                                                radius_m: radius,
                                                mask_iou_target: iou,
                                                sigma_t_m: st,
                                                sigma_r_deg: sr,
                                                use_depth: depth,
                                                optimize_extrinsics: extr,
                                                scene: scene.clone(),
                                                isolate: self.isolate,
                                                camera: self.camera,
                                                looseness: self.looseness,
                                                min_elevation: self.min_elevation,
                                                test_views: self.test_views,
                                                eval_split: self.eval_split,
                                                train: self.train.clone(),
                                                eval: self.eval,
                                            });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

/// Everything needed to reproduce one row of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub experiment: String,
    pub object: String,
    pub object_id: u8,
    pub repeat: usize,
    pub seed: u64,
    pub n_images: usize,
    pub radius_m: f64,
    pub mask_iou_target: f64,
    pub sigma_t_m: f64,
    pub sigma_r_deg: f64,
    pub use_depth: bool,
    pub optimize_extrinsics: bool,
    pub scene: SceneDescription,
    pub isolate: bool,
    pub camera: CameraIntrinsics,
    pub looseness: f64,
    pub min_elevation: f64,
    pub test_views: usize,
    pub eval_split: EvalSplit,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl CellSpec {
    pub fn evaluates_on_training_set(&self) -> bool {
        match self.eval_split {
            EvalSplit::Training => true,
            EvalSplit::Test => false,
            EvalSplit::Auto => self.optimize_extrinsics || self.sigma_t_m > 0.0 || self.sigma_r_deg > 0.0,
        }
    }

    fn scene(&self) -> SceneDescription {
        if self.isolate {
            self.scene.isolate(self.object_id)
        } else {
            self.scene.clone()
        }
    }

    fn trajectory(&self, scene: &SceneDescription, n_views: usize) -> TrajectorySpec {
        let center = if self.isolate {
            scene.object_bounds(self.object_id).map(|b| b.center()).unwrap_or([0.0; 3])
        } else {
            [0.0; 3]
        };
        TrajectorySpec {
            min_elevation: self.min_elevation,
            ..TrajectorySpec::hemisphere(center, self.radius_m, n_views)
        }
    }

    /// Pristine training views.
    pub fn training_dataset(&self) -> Result<SceneDataset> {
        let scene = self.scene();
        let traj = self.trajectory(&scene, self.n_images);
        let mut rng = Rng::new(self.seed).fork(stream::TRAJECTORY);
        make_dataset(&scene, &self.camera, &traj, &mut rng, self.looseness)
    }

    /// Held-out views from the same hemisphere.
    pub fn test_dataset(&self) -> Result<SceneDataset> {
        let scene = self.scene();
        let traj = self.trajectory(&scene, self.test_views.max(1));
        let mut rng = Rng::new(self.seed).fork(stream::TEST_VIEWS);
        make_dataset(&scene, &self.camera, &traj, &mut rng, self.looseness)
    }

    /// Applies this cell's mask and pose noise.
    pub fn corrupt(&self, ds: &SceneDataset) -> Result<SceneDataset> {
        let mut out = ds.clone();
        if self.mask_iou_target < 1.0 {
            out = corrupt_dataset_masks(&out, self.object_id, &MaskNoiseSpec::new(self.mask_iou_target, self.seed))?.0;
        }
        if self.sigma_t_m > 0.0 || self.sigma_r_deg > 0.0 {
            let spec = PoseNoiseSpec::new(self.sigma_t_m, self.sigma_r_deg.to_radians(), self.seed);
            out = corrupt_dataset_poses(&out, &spec)?;
        }
        Ok(out)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            use_depth: self.use_depth,
            optimize_extrinsics: self.optimize_extrinsics,
            ..self.train.clone()
        }
    }
}

/// One line of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub object: String,
    pub seed: u64,
    pub n_images: usize,
    pub radius_m: f64,
    pub mask_iou_target: f64,
    pub sigma_t_m: f64,
    pub sigma_r_deg: f64,
    pub use_depth: bool,
    pub optimize_extrinsics: bool,
    pub depth_mae_m: Option<f64>,
    pub mask_iou: Option<f64>,
    pub status: String,
    pub wall_s: f64,
}

#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub row: ResultRow,
    pub metrics: Option<MetricsRecord>,
    pub report: Option<TrainReport>,
}

/// Synthesizes, corrupts, trains and evaluates one cell. Evaluation always
/// uses the pristine masks and depth.
pub fn run_cell(cell: &CellSpec) -> CellOutcome {
    let start = Instant::now();
    let result = (|| -> Result<(MetricsRecord, TrainReport)> {
        let pristine = cell.training_dataset()?;
        let noisy = cell.corrupt(&pristine)?;
        let report = train(&noisy, cell.object_id, &cell.train_config())?;
        let views = if cell.evaluates_on_training_set() {
            EvalView::from_dataset(&pristine, cell.object_id, Some(&report.poses))
        } else {
            EvalView::from_dataset(&cell.test_dataset()?, cell.object_id, None)
        };
        let metrics = evaluate(&report.field, &views, &cell.eval, report.occupancy.as_ref())?;
        Ok((metrics, report))
    })();
    let mut row = ResultRow {
        experiment: cell.experiment.clone(),
        object: cell.object.clone(),
        seed: cell.seed,
        n_images: cell.n_images,
        radius_m: cell.radius_m,
        mask_iou_target: cell.mask_iou_target,
        sigma_t_m: cell.sigma_t_m,
        sigma_r_deg: cell.sigma_r_deg,
        use_depth: cell.use_depth,
        optimize_extrinsics: cell.optimize_extrinsics,
        depth_mae_m: None,
        mask_iou: None,
        status: "ok".into(),
        wall_s: 0.0,
    };
    let (metrics, report) = match result {
        Ok((m, r)) => {
            row.depth_mae_m = m.depth_mae;
            row.mask_iou = Some(m.iou);
            (Some(m), Some(r))
        }
        Err(e) => {
            row.status = format!("error: {e}");
            (None, None)
        }
    };
    row.wall_s = start.elapsed().as_secs_f64();
    CellOutcome { row, metrics, report }
}

pub fn write_results_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Mean and sample standard deviation over the rows of one condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub n_images: usize,
    pub radius_m: f64,
    pub mask_iou_target: f64,
    pub sigma_t_m: f64,
    pub sigma_r_deg: f64,
    pub use_depth: bool,
    pub optimize_extrinsics: bool,
    pub n: usize,
    pub depth_mae_mean_m: Option<f64>,
    pub depth_mae_std_m: Option<f64>,
    pub mask_iou_mean: Option<f64>,
    pub mask_iou_std: Option<f64>,
}

pub fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        Some((xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    } else {
        None
    };
    (Some(mean), std)
}

fn condition_key(r: &ResultRow) -> (usize, [u64; 4], bool, bool) {
    (
        r.n_images,
        [r.radius_m, r.mask_iou_target, r.sigma_t_m, r.sigma_r_deg].map(f64::to_bits),
        r.use_depth,
        r.optimize_extrinsics,
    )
}

/// Groups rows by condition (pooling objects and repeats), in first-seen
/// order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys = Vec::new();
    for r in rows {
        let k = condition_key(r);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|k| {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| condition_key(r) == k).collect();
            let first = group[0];
            let maes: Vec<f64> = group.iter().filter_map(|r| r.depth_mae_m).collect();
            let ious: Vec<f64> = group.iter().filter_map(|r| r.mask_iou).collect();
            let (mae_mean, mae_std) = mean_std(&maes);
            let (iou_mean, iou_std) = mean_std(&ious);
            SummaryRow {
                experiment: first.experiment.clone(),
                n_images: first.n_images,
                radius_m: first.radius_m,
                mask_iou_target: first.mask_iou_target,
                sigma_t_m: first.sigma_t_m,
                sigma_r_deg: first.sigma_r_deg,
                use_depth: first.use_depth,
                optimize_extrinsics: first.optimize_extrinsics,
                n: group.len(),
                depth_mae_mean_m: mae_mean,
                depth_mae_std_m: mae_std,
                mask_iou_mean: iou_mean,
                mask_iou_std: iou_std,
            }
        })
        .collect()
}

/// Runs every cell, writing `cells/NNNN/run.json` as each finishes and
/// `results.csv`, `summary.csv` and plots at the end.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let cells = cfg.cells()?;
    fs::create_dir_all(cfg.out_dir.join("cells"))?;
    fs::write(cfg.out_dir.join("experiment.json"), serde_json::to_string_pretty(cfg)?)?;
    let run = |i: usize, cell: &CellSpec| -> Result<ResultRow> {
        let out = run_cell(cell);
        let dir = cfg.out_dir.join("cells").join(format!("{i:04}"));
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("run.json"), serde_json::to_string_pretty(cell)?)?;
        if let Some(m) = &out.metrics {
            fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(m)?)?;
        }
        Ok(out.row)
    };
    let rows: Vec<ResultRow> = if cfg.workers == 1 {
        cells.iter().enumerate().map(|(i, c)| run(i, c)).collect::<Result<_>>()?
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| invalid("workers", e.to_string()))?;
        pool.install(|| cells.par_iter().enumerate().map(|(i, c)| run(i, c)).collect::<Result<_>>())?
    };
    write_results_csv(&rows, &cfg.out_dir.join("results.csv"))?;
    let summary = summarize(&rows);
    let mut w = csv::Writer::from_path(cfg.out_dir.join("summary.csv"))?;
    for s in &summary {
        w.serialize(s)?;
    }
    w.flush()?;
    plot::write_plots(&cfg.sweep, &summary, &cfg.out_dir)?;
    Ok(rows)
}
