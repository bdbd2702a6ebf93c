//! Joint optimization of an object field and, optionally, the camera poses.

mod adam;
mod loss;
mod occupancy;
mod ray;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{depth_residual, rgb_residual, NegativeTarget, NORM_EPS, OPAQUE_TRANSMITTANCE};
pub use occupancy::{OccupancyConfig, OccupancyGrid};
pub use ray::{
    ray_loss_backward, render_ray, LossSettings, MarchOptions, RayOutcome, RaySupervision, RayWork,
};

use crate::datamodel::{stream, Pose, Rng, SceneDataset};
use crate::error::{invalid, Error, Result};
use crate::hashfield::{FieldConfig, FieldGrads, HashGridConfig};
use crate::isolation::{build_ray_index, ClassCounts, ClassifiedPixel, RayIndex};
use crate::volrender::{clip_to_aabb, pixel_ray, sample_ray};
use crate::Field;

/// Rays handled by one parallel work item. Fixed so that gradient
/// reduction order never depends on the number of threads.
pub const CHUNK_RAYS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_steps: usize,
    pub rays_per_batch: usize,
    pub n_samples_per_ray: usize,
    pub w_depth: f64,
    pub use_depth: bool,
    pub optimize_extrinsics: bool,
    pub field_lr: f64,
    pub pose_lr_start: f64,
    pub pose_lr_end: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub negative_target: NegativeTarget,
    /// Fraction of each batch drawn from negative rays. `None` samples
    /// uniformly over positives and negatives together.
    pub neg_ratio: Option<f64>,
    pub early_stop: bool,
    pub occupancy: Option<OccupancyConfig>,
    pub field: FieldConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_steps: 2000,
            rays_per_batch: 4096,
            n_samples_per_ray: 128,
            w_depth: 3.0,
            use_depth: false,
            optimize_extrinsics: false,
            field_lr: 1e-2,
            pose_lr_start: 3.3e-4,
            pose_lr_end: 1e-5,
            adam: AdamConfig::default(),
            seed: 0,
            negative_target: NegativeTarget::Composited,
            neg_ratio: None,
            early_stop: true,
            occupancy: None,
            field: FieldConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Reduced batch, samples and hash table for CPU runs, with empty-space
    /// skipping.
    pub fn desk() -> Self {
        Self {
            rays_per_batch: 1024,
            n_samples_per_ray: 64,
            occupancy: Some(OccupancyConfig::default()),
            field: FieldConfig {
                grid: HashGridConfig {
                    n_levels: 8,
                    table_size: 1 << 15,
                    features_per_entry: 2,
                    base_resolution: 16,
                    finest_resolution: 256,
                },
                ..FieldConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rays_per_batch == 0 || self.n_samples_per_ray == 0 {
            return Err(invalid("train config", "batch and sample counts must be positive"));
        }
        if !(self.field_lr > 0.0 && self.pose_lr_start > 0.0 && self.pose_lr_end > 0.0) {
            return Err(invalid("train config", "learning rates must be positive"));
        }
        if self.pose_lr_end > self.pose_lr_start {
            return Err(invalid("train config", "pose_lr_end exceeds pose_lr_start"));
        }
        if !(self.w_depth >= 0.0) {
            return Err(invalid("train config", "w_depth must be non-negative"));
        }
        if let Some(r) = self.neg_ratio {
            if !(0.0..=1.0).contains(&r) {
                return Err(invalid("train config", "neg_ratio must lie in [0, 1]"));
            }
        }
        self.field.validate()
    }

    /// Geometric decay from `pose_lr_start` at step 0 to `pose_lr_end` at
    /// the last step.
    pub fn pose_lr(&self, step: usize) -> f64 {
        if self.n_steps <= 1 {
            return self.pose_lr_start;
        }
        let f = step as f64 / (self.n_steps - 1) as f64;
        self.pose_lr_start * (self.pose_lr_end / self.pose_lr_start).powf(f)
    }
}

/// Camera poses under optimization. Each step's tangent increment
/// `[ω, v]` is applied on the left (`R ← exp(ω) R`, `c ← c + v`) and folded
/// into the stored pose, so the live increment is always zero.
#[derive(Clone, Debug)]
pub struct PoseParams {
    initial: Vec<Pose>,
    current: Vec<Pose>,
    state: AdamState<f64>,
}

impl PoseParams {
    pub fn new(poses: Vec<Pose>) -> Self {
        Self {
            state: AdamState::new(6 * poses.len()),
            current: poses.clone(),
            initial: poses,
        }
    }

    pub fn initial(&self) -> &[Pose] {
        &self.initial
    }

    pub fn poses(&self) -> &[Pose] {
        &self.current
    }

    /// Applies one Adam step given gradients w.r.t. the increments.
    pub fn step(&mut self, grads: &[f64], lr: f64, adam: &AdamConfig) {
        let mut inc = vec![0.0; grads.len()];
        adam_step(&mut inc, grads, &mut self.state, lr, adam);
        for (pose, d) in self.current.iter_mut().zip(inc.chunks_exact(6)) {
            *pose = pose.perturbed(&nalgebra::Vector3::new(d[0], d[1], d[2]), &nalgebra::Vector3::new(d[3], d[4], d[5]));
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss_rgb: f64,
    pub loss_depth: f64,
    pub pose_lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub field: Field,
    pub poses: Vec<Pose>,
    pub trace: Vec<TraceRow>,
    pub counts: ClassCounts,
    pub occupancy: Option<OccupancyGrid>,
    pub wall_s: f64,
}

pub fn write_trace_csv(trace: &[TraceRow], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,loss_rgb,loss_depth,pose_lr")?;
    for r in trace {
        writeln!(f, "{},{},{},{}", r.step, r.loss_rgb, r.loss_depth, r.pose_lr)?;
    }
    f.flush()?;
    Ok(())
}

/// Trains a field for `target` from scratch.
pub fn train(dataset: &SceneDataset, target: u8, config: &TrainConfig) -> Result<TrainReport> {
    let index = build_ray_index(dataset, target)?;
    train_with_index(dataset, &index, config)
}

struct BatchRay<'a> {
    px: &'a ClassifiedPixel,
    c_random: [f64; 3],
    seed: u64,
}

struct ChunkOut {
    grads: FieldGrads<f32>,
    pose: Vec<(usize, [f64; 6])>,
    loss_rgb: f64,
    loss_depth: f64,
}

/// Trains from a prebuilt ray index. Masked rays in the index are ignored.
pub fn train_with_index(dataset: &SceneDataset, index: &RayIndex, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let start = Instant::now();
    let spec = dataset.object(index.target).ok_or(Error::UndeclaredInstanceId(index.target))?;
    let aabb = spec.aabb();
    let root = Rng::new(config.seed);
    let mut field = Field::new(config.field.clone(), aabb, &mut root.fork(stream::INIT))?;
    let mut poses = PoseParams::new(dataset.poses());
    let mut occupancy = config.occupancy.map(|c| {
        let diag = aabb.extent().iter().map(|e| e * e).sum::<f64>().sqrt();
        OccupancyGrid::new(c, aabb, diag / config.n_samples_per_ray as f64)
    });
    let counts = index.counts();
    let (n_pos, n_neg) = (index.positive.len(), index.negative.len());
    if n_pos + n_neg == 0 && config.n_steps > 0 {
        return Err(invalid("ray index", "no positive or negative rays"));
    }

    let train_rng = root.fork(stream::TRAINING);
    let n_params = field.n_params();
    let grid_len = field.grid_len();
    let mut dense = vec![0.0f32; n_params];
    let mut field_state = AdamState::<f32>::new(n_params);
    let mut pose_grads = vec![0.0f64; 6 * dataset.frames.len()];
    let settings = LossSettings {
        mode: config.negative_target,
        use_depth: config.use_depth,
        w_depth: config.w_depth,
        scale: 1.0 / config.rays_per_batch as f64,
    };
    let k = dataset.intrinsics;
    let mut trace = Vec::with_capacity(config.n_steps);

    for step in 0..config.n_steps {
        let mut rng = train_rng.fork(step as u64);
        let batch: Vec<BatchRay> = (0..config.rays_per_batch)
            .map(|_| {
                let negative = match config.neg_ratio {
                    _ if n_neg == 0 => false,
                    _ if n_pos == 0 => true,
                    Some(r) => rng.uniform() < r,
                    None => rng.below(n_pos + n_neg) >= n_pos,
                };
                let px = if negative {
                    &index.negative[rng.below(n_neg)]
                } else {
                    &index.positive[rng.below(n_pos)]
                };
                BatchRay {
                    px,
                    c_random: [rng.uniform(), rng.uniform(), rng.uniform()],
                    seed: rng.next_u64(),
                }
            })
            .collect();

        let opts = MarchOptions {
            early_stop: config.early_stop,
            occupancy: occupancy.as_ref(),
        };
        let current = poses.poses();
        let field_ref = &field;
        let outs: Vec<Result<ChunkOut>> = batch
            .par_chunks(CHUNK_RAYS)
            .map_init(
                || (RayWork::new(field_ref), Vec::new()),
                |(work, ts), chunk| {
                    let mut out = ChunkOut {
                        grads: field_ref.new_grads(),
                        pose: Vec::with_capacity(chunk.len()),
                        loss_rgb: 0.0,
                        loss_depth: 0.0,
                    };
                    for r in chunk {
                        let pose = &current[r.px.frame];
                        let ray = pixel_ray(&k, pose, r.px.u as f64, r.px.v as f64);
                        match clip_to_aabb(&ray, &aabb) {
                            Some(c) => sample_ray(&c, config.n_samples_per_ray, Some(&mut Rng::new(r.seed)), ts),
                            None => ts.clear(),
                        }
                        let sup = RaySupervision {
                            class: r.px.class,
                            gt_color: r.px.gt_color.map(|c| c.map(f64::from)),
                            gt_depth: r.px.gt_depth.map(f64::from),
                            c_random: r.c_random,
                        };
                        let o = ray_loss_backward(
                            field_ref,
                            work,
                            &ray.origin,
                            &ray.direction,
                            ts,
                            &sup,
                            &settings,
                            opts,
                            &mut out.grads,
                        )?;
                        out.loss_rgb += o.loss_rgb;
                        out.loss_depth += o.loss_depth;
                        out.pose.push((r.px.frame, o.pose_grad));
                    }
                    Ok(out)
                },
            )
            .collect();

        dense.iter_mut().for_each(|g| *g = 0.0);
        pose_grads.iter_mut().for_each(|g| *g = 0.0);
        let (mut loss_rgb, mut loss_depth) = (0.0, 0.0);
        for out in outs {
            let out = out.map_err(|e| match e {
                Error::DivergedParameters => Error::TrainingDiverged { step },
                e => e,
            })?;
            out.grads.add_to_dense(grid_len, &mut dense);
            for (f, g) in out.pose {
                for j in 0..6 {
                    pose_grads[6 * f + j] += g[j];
                }
            }
            loss_rgb += out.loss_rgb;
            loss_depth += out.loss_depth;
        }
        loss_rgb *= settings.scale;
        loss_depth *= settings.scale;
        if !(loss_rgb.is_finite() && loss_depth.is_finite()) || dense.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged { step });
        }

        adam_step(field.params_mut(), &dense, &mut field_state, config.field_lr, &config.adam);
        let pose_lr = config.pose_lr(step);
        if config.optimize_extrinsics {
            poses.step(&pose_grads, pose_lr, &config.adam);
        }
        trace.push(TraceRow {
            step,
            loss_rgb,
            loss_depth,
            pose_lr,
        });
        if let Some(grid) = occupancy.as_mut() {
            if grid.due(step) {
                grid.refresh(&field, &mut train_rng.fork(u64::MAX - step as u64));
            }
        }
    }
    field.check_finite().map_err(|_| Error::TrainingDiverged {
        step: config.n_steps.saturating_sub(1),
    })?;

    Ok(TrainReport {
        field,
        poses: poses.current,
        trace,
        counts,
        occupancy,
        wall_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests;
