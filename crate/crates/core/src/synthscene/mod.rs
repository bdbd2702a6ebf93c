//! Deterministic ray tracer producing ground-truth color, ray-distance
//! depth and instance masks for parametric tabletop scenes.

mod primitive;
mod scenes;
mod trajectory;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use primitive::{Hit, Primitive, Shape, Texture};
pub use scenes::{four_objects, DEFAULT_FOCAL, DEFAULT_HEIGHT, DEFAULT_WIDTH};
pub use trajectory::{sample_trajectory, TrajectoryKind, TrajectorySpec};

use crate::datamodel::{
    Aabb, CameraIntrinsics, Frame, ObjectSpec, Pose, Raster, Rng, SceneDataset, NEAR_LIMIT,
};
use crate::error::{invalid, Result};
use crate::volrender::pixel_ray;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Light {
    /// Direction towards the light (normalized on use).
    pub direction: [f64; 3],
    /// Fraction of albedo visible in full shadow.
    pub ambient: f64,
}

impl Default for Light {
    fn default() -> Self {
        Self {
            direction: [0.3, 0.5, 1.0],
            ambient: 0.35,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    /// Height of the infinite ground plane.
    pub height: f64,
    pub texture: Texture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub light: Light,
    pub table: Option<Table>,
    #[serde(default = "default_background")]
    pub background: [f64; 3],
}

fn default_background() -> [f64; 3] {
    [0.85, 0.88, 0.92]
}

impl SceneDescription {
    pub fn validate(&self) -> Result<()> {
        for p in &self.primitives {
            p.shape.validate()?;
        }
        if !self.primitives.iter().any(|p| p.object_id != 0) {
            return Err(invalid("scene", "no primitive carries an instance id"));
        }
        Ok(())
    }

    /// Distinct nonzero instance ids, ascending.
    pub fn object_ids(&self) -> Vec<u8> {
        let mut ids: Vec<u8> = self.primitives.iter().map(|p| p.object_id).filter(|&i| i != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn object_name(&self, id: u8) -> String {
        self.primitives
            .iter()
            .find(|p| p.object_id == id && !p.name.is_empty())
            .map(|p| p.name.clone())
            .unwrap_or_else(|| format!("object{id}"))
    }

    /// Tight bounds of every primitive carrying `id`.
    pub fn object_bounds(&self, id: u8) -> Option<Aabb> {
        self.primitives
            .iter()
            .filter(|p| p.object_id == id)
            .map(|p| p.shape.bounds())
            .reduce(|a, b| a.union(&b))
    }

    /// Copy keeping only background geometry and object `id`.
    pub fn isolate(&self, id: u8) -> SceneDescription {
        SceneDescription {
            primitives: self
                .primitives
                .iter()
                .filter(|p| p.object_id == 0 || p.object_id == id)
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// Object specs with boxes inflated about their centers by `looseness`.
    pub fn object_specs(&self, looseness: f64) -> Vec<ObjectSpec> {
        self.object_ids()
            .into_iter()
            .map(|id| {
                let b = self.object_bounds(id).expect("id taken from primitives").inflated(looseness);
                ObjectSpec {
                    id,
                    name: self.object_name(id),
                    aabb_min: b.min,
                    aabb_max: b.max,
                }
            })
            .collect()
    }

    /// Nearest surface along a ray: `(t, normal, albedo, object_id)`.
    pub fn trace(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(Hit, [f64; 3], u8)> {
        let mut best: Option<(Hit, usize)> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some(h) = p.shape.intersect(o, d, NEAR_LIMIT) {
                if best.map_or(true, |(b, _)| h.t < b.t) {
                    best = Some((h, i));
                }
            }
        }
        let mut result = best.map(|(h, i)| {
            let p = &self.primitives[i];
            (h, p.albedo.albedo(&(o + d * h.t)), p.object_id)
        });
        if let Some(table) = &self.table {
            if d.z != 0.0 {
                let t = (table.height - o.z) / d.z;
                if t >= NEAR_LIMIT && result.map_or(true, |(h, _, _)| t < h.t) {
                    let hit = Hit {
                        t,
                        normal: Vector3::z(),
                    };
                    result = Some((hit, table.texture.albedo(&(o + d * t)), 0));
                }
            }
        }
        result
    }

    fn shade(&self, hit: &Hit, d: &Vector3<f64>, albedo: [f64; 3]) -> [f64; 3] {
        let l = Vector3::from(self.light.direction).normalize();
        let n = if hit.normal.dot(d) > 0.0 { -hit.normal } else { hit.normal };
        let lambert = n.dot(&l).max(0.0);
        let k = self.light.ambient + (1.0 - self.light.ambient) * lambert;
        albedo.map(|a| a * k)
    }
}

fn quantize(c: [f64; 3]) -> [u8; 3] {
    c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Renders one ground-truth frame. Rows are traced in parallel; each pixel
/// is independent so the output does not depend on the thread count.
pub fn render_ground_truth(scene: &SceneDescription, k: &CameraIntrinsics, pose: &Pose) -> Frame {
    let (w, h) = (k.width, k.height);
    let rows: Vec<Vec<([u8; 3], f32, u8)>> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|u| {
                    let ray = pixel_ray(k, pose, u as f64, v as f64);
                    match scene.trace(&ray.origin, &ray.direction) {
                        Some((hit, albedo, id)) => (
                            quantize(scene.shade(&hit, &ray.direction, albedo)),
                            hit.t as f32,
                            id,
                        ),
                        None => (quantize(scene.background), 0.0, 0),
                    }
                })
                .collect()
        })
        .collect();
    let px: Vec<_> = rows.into_iter().flatten().collect();
    Frame {
        rgb: Raster::from_vec(w, h, px.iter().map(|p| p.0).collect()).unwrap(),
        depth: Raster::from_vec(w, h, px.iter().map(|p| p.1).collect()).unwrap(),
        mask: Raster::from_vec(w, h, px.iter().map(|p| p.2).collect()).unwrap(),
        pose: *pose,
    }
}

/// Samples a trajectory and renders every view.
pub fn make_dataset(
    scene: &SceneDescription,
    intrinsics: &CameraIntrinsics,
    trajectory: &TrajectorySpec,
    rng: &mut Rng,
    looseness: f64,
) -> Result<SceneDataset> {
    scene.validate()?;
    intrinsics.validate()?;
    if !(looseness >= 1.0) {
        return Err(invalid("looseness", "boxes must enclose their objects (>= 1)"));
    }
    let poses = sample_trajectory(trajectory, rng)?;
    let frames = poses.iter().map(|p| render_ground_truth(scene, intrinsics, p)).collect();
    let ds = SceneDataset {
        intrinsics: *intrinsics,
        frames,
        objects: scene.object_specs(looseness),
    };
    ds.validate()?;
    Ok(ds)
}

/// Renders a set of poses without sampling a trajectory.
pub fn render_views(
    scene: &SceneDescription,
    intrinsics: &CameraIntrinsics,
    poses: &[Pose],
    looseness: f64,
) -> SceneDataset {
    SceneDataset {
        intrinsics: *intrinsics,
        frames: poses.iter().map(|p| render_ground_truth(scene, intrinsics, p)).collect(),
        objects: scene.object_specs(looseness),
    }
}

/// Declarative scene file consumed by the `synth` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub scene: SceneDescription,
    pub camera: CameraIntrinsics,
    pub trajectory: TrajectorySpec,
    #[serde(default = "default_looseness")]
    pub looseness: f64,
}

pub fn default_looseness() -> f64 {
    1.25
}

impl SceneConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => crate::Error::FileNotFound(path.to_path_buf()),
            _ => e.into(),
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}
