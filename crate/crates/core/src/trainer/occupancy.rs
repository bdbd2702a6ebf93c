use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Aabb, Rng};
use crate::hashfield::HashField;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccupancyConfig {
    /// Cells per axis.
    pub resolution: usize,
    /// Steps between refreshes.
    pub update_every: usize,
    /// Steps before the first refresh; every cell is occupied until then.
    pub warmup_steps: usize,
    /// Per-sample opacity below which a cell counts as empty.
    pub opacity_threshold: f64,
    /// Multiplier applied to the stored density before each refresh.
    pub decay: f64,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            update_every: 16,
            warmup_steps: 64,
            opacity_threshold: 0.01,
            decay: 0.95,
        }
    }
}

/// Coarse density bitfield over the field's box used to skip samples in
/// empty space.
#[derive(Clone, Debug)]
pub struct OccupancyGrid {
    config: OccupancyConfig,
    aabb: Aabb,
    density: Vec<f32>,
    occupied: Vec<bool>,
    sigma_threshold: f64,
}

impl OccupancyGrid {
    /// `step_length` is the typical sample spacing, used to turn the opacity
    /// threshold into a density threshold.
    pub fn new(config: OccupancyConfig, aabb: Aabb, step_length: f64) -> Self {
        let n = config.resolution.pow(3);
        Self {
            sigma_threshold: -(1.0 - config.opacity_threshold).ln() / step_length,
            config,
            aabb,
            density: vec![0.0; n],
            occupied: vec![true; n],
        }
    }

    pub fn config(&self) -> &OccupancyConfig {
        &self.config
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.occupied.iter().filter(|&&o| o).count() as f64 / self.occupied.len() as f64
    }

    fn cell(&self, p: &Vector3<f64>) -> Option<usize> {
        let r = self.config.resolution;
        let mut idx = 0;
        for k in (0..3).rev() {
            let u = (p[k] - self.aabb.min[k]) / (self.aabb.max[k] - self.aabb.min[k]);
            if !(0.0..=1.0).contains(&u) {
                return None;
            }
            let c = ((u * r as f64) as usize).min(r - 1);
            idx = idx * r + c;
        }
        Some(idx)
    }

    /// Points outside the box are never occupied.
    pub fn is_occupied(&self, p: &Vector3<f64>) -> bool {
        self.cell(p).map_or(false, |c| self.occupied[c])
    }

    /// Whether a refresh is due after `step` (0-based) completed.
    pub fn due(&self, step: usize) -> bool {
        let s = step + 1;
        s >= self.config.warmup_steps && (s - self.config.warmup_steps) % self.config.update_every == 0
    }

    /// Re-evaluates density at one jittered point per cell.
    pub fn refresh<T: Real>(&mut self, field: &HashField<T>, rng: &mut Rng) {
        let r = self.config.resolution;
        let ext = self.aabb.extent();
        let mut cache = field.new_cache();
        let dir = [T::zero(), T::zero(), T::one()];
        for i in 0..self.density.len() {
            let c = [i % r, (i / r) % r, i / (r * r)];
            let p = [0, 1, 2].map(|k| {
                T::lit(self.aabb.min[k] + (c[k] as f64 + rng.uniform()) / r as f64 * ext[k])
            });
            // A diverged field is caught by the training step itself.
            let sigma = field.forward(p, dir, &mut cache).map(|o| o.sigma.to_f64_lossy()).unwrap_or(f64::INFINITY);
            let d = (self.density[i] as f64 * self.config.decay).max(sigma);
            self.density[i] = d as f32;
        }
        let mean = self.density.iter().map(|&d| d as f64).sum::<f64>() / self.density.len() as f64;
        // Never demand more than the mean density, so a field that is still
        // dim everywhere keeps its brightest cells.
        let threshold = self.sigma_threshold.min(mean);
        for (o, &d) in self.occupied.iter_mut().zip(&self.density) {
            *o = d as f64 > threshold;
        }
    }
}
