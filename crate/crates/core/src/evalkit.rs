//! Geometric evaluation of a trained object field: rendered masks and
//! depth against ideal masks and ground-truth depth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{CameraIntrinsics, Frame, Pose, Raster, SceneDataset};
use crate::error::{invalid, Error, Result};
use crate::hashfield::HashField;
use crate::scalar::Real;
use crate::trainer::{render_ray, MarchOptions, OccupancyGrid, RayWork};
use crate::volrender::{clip_to_aabb, pixel_ray, sample_ray};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalView {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub ideal_mask: Raster<bool>,
    pub gt_depth: Raster<f32>,
}

impl EvalView {
    pub fn from_frame(frame: &Frame, intrinsics: CameraIntrinsics, object_id: u8) -> Self {
        Self {
            pose: frame.pose,
            intrinsics,
            ideal_mask: frame.mask.map(|m| m == object_id),
            gt_depth: frame.depth.clone(),
        }
    }

    /// Views for `object_id`, rendered from `poses` when given (e.g. poses
    /// refined during training) and from the recorded poses otherwise.
    pub fn from_dataset(ds: &SceneDataset, object_id: u8, poses: Option<&[Pose]>) -> Vec<EvalView> {
        ds.frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let mut v = EvalView::from_frame(f, ds.intrinsics, object_id);
                if let Some(p) = poses {
                    v.pose = p[i];
                }
                v
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    /// Expected depth divided by opacity.
    #[default]
    Normalized,
    /// Expected depth as accumulated.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub opacity_threshold: f64,
    pub depth_mode: DepthMode,
    pub early_stop: bool,
    /// Skip samples in cells the training occupancy grid marks empty.
    pub use_occupancy: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 128,
            opacity_threshold: 0.5,
            depth_mode: DepthMode::Normalized,
            early_stop: true,
            use_occupancy: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub depth: Raster<f32>,
    pub mask: Raster<bool>,
    pub opacity: Raster<f32>,
    pub rgb: Raster<[u8; 3]>,
}

/// Renders depth, mask and color with midpoint sampling.
pub fn render_object_view<T: Real>(
    field: &HashField<T>,
    pose: &Pose,
    k: &CameraIntrinsics,
    cfg: &EvalConfig,
    occupancy: Option<&OccupancyGrid>,
) -> Result<RenderedView> {
    let opts = MarchOptions {
        early_stop: cfg.early_stop,
        occupancy: occupancy.filter(|_| cfg.use_occupancy),
    };
    let rows: Vec<Result<Vec<(f32, bool, f32, [u8; 3])>>> = (0..k.height)
        .into_par_iter()
        .map_init(
            || (RayWork::new(field), Vec::new()),
            |(work, ts), v| {
                (0..k.width)
                    .map(|u| {
                        let ray = pixel_ray(k, pose, u as f64, v as f64);
                        let Some(c) = clip_to_aabb(&ray, field.aabb()) else {
                            return Ok((0.0, false, 0.0, [0; 3]));
                        };
                        sample_ray(&c, cfg.n_samples, None, ts);
                        let r = render_ray(field, work, &ray.origin, &ray.direction, ts, opts)?;
                        let opacity = r.opacity.to_f64_lossy();
                        let masked = opacity > cfg.opacity_threshold;
                        let depth = match (masked, cfg.depth_mode) {
                            (false, _) => 0.0,
                            (true, DepthMode::Normalized) => r.depth.to_f64_lossy() / opacity,
                            (true, DepthMode::Raw) => r.depth.to_f64_lossy(),
                        };
                        let rgb = r.color.map(|c| (c.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8);
                        Ok((depth as f32, masked, opacity as f32, rgb))
                    })
                    .collect()
            },
        )
        .collect();
    let mut px = Vec::with_capacity(k.n_pixels());
    for row in rows {
        px.extend(row?);
    }
    Ok(RenderedView {
        depth: Raster::from_vec(k.width, k.height, px.iter().map(|p| p.0).collect())?,
        mask: Raster::from_vec(k.width, k.height, px.iter().map(|p| p.1).collect())?,
        opacity: Raster::from_vec(k.width, k.height, px.iter().map(|p| p.2).collect())?,
        rgb: Raster::from_vec(k.width, k.height, px.iter().map(|p| p.3).collect())?,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub depth_mae: Option<f64>,
    pub iou: f64,
    pub intersection: usize,
    pub union: usize,
    pub abs_error_sum: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Meters; absent when no pixel is correctly categorized.
    pub depth_mae: Option<f64>,
    pub iou: f64,
    pub n_correct_pixels: usize,
    pub per_view: Vec<ViewMetrics>,
}

fn iou_of(intersection: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    }
}

/// Metrics of one rendered view against its ideal mask and depth.
pub fn view_metrics(rendered_mask: &Raster<bool>, rendered_depth: &Raster<f32>, view: &EvalView) -> Result<ViewMetrics> {
    if rendered_mask.dims() != view.ideal_mask.dims() || rendered_depth.dims() != view.gt_depth.dims() {
        return Err(Error::DimensionMismatch("rendered and ideal rasters differ in size".into()));
    }
    let mut m = ViewMetrics::default();
    for i in 0..rendered_mask.data().len() {
        let r = rendered_mask.data()[i];
        let g = view.ideal_mask.data()[i];
        if r || g {
            m.union += 1;
        }
        if r && g {
            m.intersection += 1;
            m.abs_error_sum += (rendered_depth.data()[i] as f64 - view.gt_depth.data()[i] as f64).abs();
        }
    }
    m.iou = iou_of(m.intersection, m.union);
    m.depth_mae = (m.intersection > 0).then(|| m.abs_error_sum / m.intersection as f64);
    Ok(m)
}

/// Pools per-view metrics over all pixels of all views.
pub fn pool(per_view: Vec<ViewMetrics>) -> MetricsRecord {
    let inter: usize = per_view.iter().map(|v| v.intersection).sum();
    let union: usize = per_view.iter().map(|v| v.union).sum();
    let err: f64 = per_view.iter().map(|v| v.abs_error_sum).sum();
    MetricsRecord {
        depth_mae: (inter > 0).then(|| err / inter as f64),
        iou: iou_of(inter, union),
        n_correct_pixels: inter,
        per_view,
    }
}

/// Renders every view and pools the metrics.
pub fn evaluate<T: Real>(
    field: &HashField<T>,
    views: &[EvalView],
    cfg: &EvalConfig,
    occupancy: Option<&OccupancyGrid>,
) -> Result<MetricsRecord> {
    if views.is_empty() {
        return Err(invalid("views", "need at least one view"));
    }
    let per_view = views
        .iter()
        .map(|v| {
            let r = render_object_view(field, &v.pose, &v.intrinsics, cfg, occupancy)?;
            view_metrics(&r.mask, &r.depth, v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pool(per_view))
}
