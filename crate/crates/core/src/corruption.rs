//! Controlled noise on instance masks (boundary patches until a target IoU)
//! and on camera poses (Gaussian translation, random-axis rotation).

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{stream, Pose, Raster, Rng, SceneDataset};
use crate::error::{invalid, Error, Result};

/// Width at which `patch_radius_range` is specified; radii scale with the
/// actual image width.
pub const REFERENCE_WIDTH: f64 = 640.0;
pub const IOU_TOLERANCE: f64 = 0.01;
pub const MAX_ITERATIONS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskNoiseSpec {
    pub target_iou: f64,
    /// Patch radius bounds in pixels at 640 px image width.
    #[serde(default = "default_radius")]
    pub patch_radius_range: (f64, f64),
    #[serde(default)]
    pub seed: u64,
}

fn default_radius() -> (f64, f64) {
    (2.0, 8.0)
}

impl MaskNoiseSpec {
    pub fn new(target_iou: f64, seed: u64) -> Self {
        Self {
            target_iou,
            patch_radius_range: default_radius(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_iou > 0.0 && self.target_iou <= 1.0) {
            return Err(invalid("target_iou", "must lie in (0, 1]"));
        }
        let (lo, hi) = self.patch_radius_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(invalid("patch_radius_range", "need 0 < min <= max"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseNoiseSpec {
    /// Per-axis translation standard deviation, meters.
    pub sigma_t: f64,
    /// Rotation angle standard deviation, radians.
    pub sigma_r: f64,
    #[serde(default)]
    pub seed: u64,
    /// Rotate every pose about this axis instead of a random one.
    #[serde(default)]
    pub fixed_axis: Option<[f64; 3]>,
}

impl PoseNoiseSpec {
    pub fn new(sigma_t: f64, sigma_r: f64, seed: u64) -> Self {
        Self {
            sigma_t,
            sigma_r,
            seed,
            fixed_axis: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_t >= 0.0 && self.sigma_r >= 0.0) {
            return Err(invalid("pose noise", "standard deviations must be non-negative"));
        }
        if let Some(a) = self.fixed_axis {
            if !(Vector3::from(a).norm() > 0.0) {
                return Err(invalid("fixed_axis", "must be nonzero"));
            }
        }
        Ok(())
    }
}

/// IoU of the `object_id` regions of two masks; 1 when both are empty.
pub fn mask_iou(a: &Raster<u8>, b: &Raster<u8>, object_id: u8) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x == object_id, y == object_id);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorruptedMask {
    pub mask: Raster<u8>,
    pub iou: f64,
    pub iterations: usize,
    pub added: usize,
    pub removed: usize,
}

/// Inclusive pixel rectangle `[u0, u1] x [v0, v1]`.
type Rect = (i64, i64, i64, i64);

fn full_rect(mask: &Raster<u8>) -> Rect {
    (0, mask.width() as i64 - 1, 0, mask.height() as i64 - 1)
}

fn edge_pixels(mask: &Raster<u8>, object_id: u8, outer: bool, rect: Rect) -> Vec<(u32, u32)> {
    let (w, h) = mask.dims();
    let inside = |x: i64, y: i64| {
        x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && mask.get(x as u32, y as u32) == object_id
    };
    let mut out = Vec::new();
    for v in rect.2.max(0)..=rect.3.min(h as i64 - 1) {
        for u in rect.0.max(0)..=rect.1.min(w as i64 - 1) {
            if inside(u, v) == outer {
                continue;
            }
            let edge = (-1..=1).any(|dv| (-1..=1).any(|du| inside(u + du, v + dv) == outer));
            if edge {
                out.push((u as u32, v as u32));
            }
        }
    }
    out
}

/// Object pixels with at least one of their 8 neighbours outside the object
/// (pixels beyond the image border count as outside).
pub fn boundary_pixels(mask: &Raster<u8>, object_id: u8) -> Vec<(u32, u32)> {
    edge_pixels(mask, object_id, false, full_rect(mask))
}

/// Non-object pixels with at least one object pixel among their 8 neighbours.
pub fn outer_boundary_pixels(mask: &Raster<u8>, object_id: u8) -> Vec<(u32, u32)> {
    edge_pixels(mask, object_id, true, full_rect(mask))
}

/// Stamps add/remove discs on the object boundary until the IoU with the
/// input is within 0.01 of the target. Removals are centred on the inner
/// boundary and additions on the outer one, so both touch at least one
/// pixel at any radius. Pixels of other objects are never written. A stamp
/// that would undershoot the tolerance band is undone.
pub fn corrupt_mask(mask: &Raster<u8>, object_id: u8, spec: &MaskNoiseSpec, rng: &mut Rng) -> Result<CorruptedMask> {
    spec.validate()?;
    let (w, h) = mask.dims();
    let original: Vec<bool> = mask.data().iter().map(|&m| m == object_id).collect();
    let n_obj = original.iter().filter(|&&o| o).count();
    if n_obj == 0 {
        return Err(Error::NoBoundary(object_id));
    }
    let mut cur = mask.clone();
    let (mut inter, mut union) = (n_obj as i64, n_obj as i64);
    let iou = |i: i64, u: i64| if u == 0 { 1.0 } else { i as f64 / u as f64 };
    let scale = w as f64 / REFERENCE_WIDTH;
    let (rmin, rmax) = (spec.patch_radius_range.0 * scale, spec.patch_radius_range.1 * scale);
    let (mut added, mut removed) = (0usize, 0usize);
    let mut touched: Vec<(usize, u8)> = Vec::new();
    // Conservative bounds of the current region, grown by one pixel so the
    // outer boundary is covered.
    let mut bounds: Rect = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
    for (i, &o) in original.iter().enumerate() {
        if o {
            let (x, y) = ((i % w as usize) as i64, (i / w as usize) as i64);
            bounds = (bounds.0.min(x - 1), bounds.1.max(x + 1), bounds.2.min(y - 1), bounds.3.max(y + 1));
        }
    }

    for it in 0..MAX_ITERATIONS {
        if (iou(inter, union) - spec.target_iou).abs() <= IOU_TOLERANCE {
            return Ok(CorruptedMask {
                mask: cur,
                iou: iou(inter, union),
                iterations: it,
                added,
                removed,
            });
        }
        let add = rng.uniform() < 0.5;
        let boundary = edge_pixels(&cur, object_id, add, bounds);
        if boundary.is_empty() {
            if add && inter + union > 0 {
                // Object covers the whole image; only removals are possible.
                continue;
            }
            return Err(Error::NoBoundary(object_id));
        }
        let (cu, cv) = boundary[rng.below(boundary.len())];
        let r = rng.uniform_range(rmin, rmax);
        let (from, to) = if add { (0u8, object_id) } else { (object_id, 0u8) };
        let (ri, mut di, mut du) = (r.ceil() as i64, 0i64, 0i64);
        touched.clear();
        for dv in -ri..=ri {
            for dx in -ri..=ri {
                if (dx * dx + dv * dv) as f64 > r * r {
                    continue;
                }
                let (x, y) = (cu as i64 + dx, cv as i64 + dv);
                if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                    continue;
                }
                let i = y as usize * w as usize + x as usize;
                if cur.data()[i] != from {
                    continue;
                }
                touched.push((i, from));
                cur.data_mut()[i] = to;
                match (add, original[i]) {
                    (true, true) => di += 1,
                    (true, false) => du += 1,
                    (false, true) => di -= 1,
                    (false, false) => du -= 1,
                }
            }
        }
        if iou(inter + di, union + du) < spec.target_iou - IOU_TOLERANCE {
            for &(i, v) in &touched {
                cur.data_mut()[i] = v;
            }
            continue;
        }
        inter += di;
        union += du;
        if add {
            let g = ri + 1;
            bounds = (
                bounds.0.min(cu as i64 - g),
                bounds.1.max(cu as i64 + g),
                bounds.2.min(cv as i64 - g),
                bounds.3.max(cv as i64 + g),
            );
            added += touched.len();
        } else {
            removed += touched.len();
        }
    }
    Err(Error::TargetUnreachable {
        target: spec.target_iou,
        reached: iou(inter, union),
        iterations: MAX_ITERATIONS,
    })
}

/// Corrupts the `object_id` region of every frame independently, each with
/// its own substream keyed on the frame index.
pub fn corrupt_dataset_masks(ds: &SceneDataset, object_id: u8, spec: &MaskNoiseSpec) -> Result<(SceneDataset, Vec<f64>)> {
    let root = Rng::new(spec.seed).fork(stream::MASK_NOISE);
    let results: Vec<Result<Option<CorruptedMask>>> = ds
        .frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            if !f.mask.data().contains(&object_id) {
                return Ok(None);
            }
            corrupt_mask(&f.mask, object_id, spec, &mut root.fork(i as u64)).map(Some)
        })
        .collect();
    let mut out = ds.clone();
    let mut ious = Vec::new();
    for (f, r) in out.frames.iter_mut().zip(results) {
        if let Some(c) = r? {
            f.mask = c.mask;
            ious.push(c.iou);
        }
    }
    Ok((out, ious))
}

/// Perturbs every pose: `c ← c + η`, `R ← R_θ R` with the rotation taken
/// about the camera center.
pub fn corrupt_poses(poses: &[Pose], spec: &PoseNoiseSpec, rng: &mut Rng) -> Result<Vec<Pose>> {
    spec.validate()?;
    let fixed = spec.fixed_axis.map(|a| Vector3::from(a).normalize());
    Ok(poses
        .iter()
        .map(|p| {
            let mut out = *p;
            if spec.sigma_t > 0.0 {
                let eta = Vector3::new(rng.normal(), rng.normal(), rng.normal()) * spec.sigma_t;
                out.translation += eta;
            }
            if spec.sigma_r > 0.0 {
                let axis = fixed.unwrap_or_else(|| Vector3::from(rng.unit_vector()));
                let theta = rng.normal() * spec.sigma_r;
                out = out.perturbed(&(axis * theta), &Vector3::zeros());
            }
            out
        })
        .collect())
}

/// Pose noise for a whole dataset, drawn from the pose-noise substream.
pub fn corrupt_dataset_poses(ds: &SceneDataset, spec: &PoseNoiseSpec) -> Result<SceneDataset> {
    let poses = corrupt_poses(&ds.poses(), spec, &mut Rng::new(spec.seed).fork(stream::POSE_NOISE))?;
    Ok(ds.with_poses(&poses))
}
