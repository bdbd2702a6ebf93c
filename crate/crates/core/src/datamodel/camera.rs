use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Closest distance along a ray at which anything is sampled or rendered.
pub const NEAR_LIMIT: f64 = 0.01;

/// Pinhole intrinsics in pixels. Pixel `(u, v)` covers `[u, u+1) x [v, v+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(width: u32, height: u32, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
        };
        k.validate()?;
        Ok(k)
    }

    /// Centered principal point with a square-pixel focal length.
    pub fn centered(width: u32, height: u32, focal: f64) -> Self {
        Self {
            width,
            height,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.height < 1 {
            return Err(invalid("intrinsics", "width and height must be >= 1"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(invalid("intrinsics", "focal lengths must be positive"));
        }
        if !(0.0..self.width as f64).contains(&self.cx)
            || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(invalid("intrinsics", "principal point outside the image"));
        }
        Ok(())
    }

    pub fn n_pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Same field of view at a different resolution.
    pub fn scaled(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            width,
            height,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
        }
    }

    /// Camera-frame direction (x right, y down, z forward) through the
    /// continuous pixel coordinate `(u, v)`; pixel centers sit at `+0.5`.
    pub fn camera_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new(
            (u + 0.5 - self.cx) / self.fx,
            (v + 0.5 - self.cy) / self.fy,
            1.0,
        )
        .normalize()
    }

    /// Projects a camera-frame point to continuous pixel coordinates
    /// (inverse of [`camera_direction`](Self::camera_direction)).
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p.x / p.z + self.cx - 0.5,
            self.fy * p.y / p.z + self.cy - 0.5,
        ))
    }
}

/// Axis-aligned box in world coordinates (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0..3).all(|k| self.min[k].is_finite() && self.max[k].is_finite())
            && (0..3).all(|k| self.min[k] < self.max[k]);
        if ok {
            Ok(())
        } else {
            Err(invalid("aabb", format!("{:?} .. {:?}", self.min, self.max)))
        }
    }

    pub fn empty() -> Self {
        Self {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut out = *self;
        for k in 0..3 {
            out.min[k] = out.min[k].min(other.min[k]);
            out.max[k] = out.max[k].max(other.max[k]);
        }
        out
    }

    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|k| 0.5 * (self.min[k] + self.max[k]))
    }

    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|k| self.max[k] - self.min[k])
    }

    /// Scales the box about its center.
    pub fn inflated(&self, factor: f64) -> Aabb {
        let c = self.center();
        let e = self.extent();
        Aabb {
            min: [0, 1, 2].map(|k| c[k] - 0.5 * e[k] * factor),
            max: [0, 1, 2].map(|k| c[k] + 0.5 * e[k] * factor),
        }
    }

    pub fn contains(&self, p: &[f64; 3], tol: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - tol && p[k] <= self.max[k] + tol)
    }
}
