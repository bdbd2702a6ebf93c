use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Pose, Rng};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Area-uniform positions on the upper hemisphere around `center`.
    Hemisphere,
    /// Evenly spaced azimuths along a partial circle; elevation jittered
    /// within `elevation_range` around `elevation`.
    Arc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub radius: f64,
    pub center: [f64; 3],
    pub n_views: usize,
    /// Lowest elevation for the hemisphere, radians.
    #[serde(default)]
    pub min_elevation: f64,
    /// Arc: mean elevation, radians.
    #[serde(default = "default_elevation")]
    pub elevation: f64,
    /// Arc: total elevation spread, radians.
    #[serde(default)]
    pub elevation_range: f64,
    /// Arc: azimuth covered, radians.
    #[serde(default = "default_span")]
    pub azimuth_span: f64,
}

fn default_elevation() -> f64 {
    0.6
}

fn default_span() -> f64 {
    std::f64::consts::PI
}

impl TrajectorySpec {
    pub fn hemisphere(center: [f64; 3], radius: f64, n_views: usize) -> Self {
        Self {
            kind: TrajectoryKind::Hemisphere,
            radius,
            center,
            n_views,
            min_elevation: 0.0,
            elevation: default_elevation(),
            elevation_range: 0.0,
            azimuth_span: default_span(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || self.n_views == 0 {
            return Err(invalid("trajectory", "need radius > 0 and n_views >= 1"));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.min_elevation) {
            return Err(invalid("trajectory", "min_elevation must be in [0, pi/2)"));
        }
        Ok(())
    }
}

/// Camera poses on the trajectory, each looking at `center`.
pub fn sample_trajectory(spec: &TrajectorySpec, rng: &mut Rng) -> Result<Vec<Pose>> {
    spec.validate()?;
    let center = Vector3::from(spec.center);
    let poses = (0..spec.n_views)
        .map(|i| {
            let (elev, azim) = match spec.kind {
                TrajectoryKind::Hemisphere => {
                    // Uniform in area: sin(elevation) uniform.
                    let z = rng.uniform_range(spec.min_elevation.sin(), 1.0);
                    (z.asin(), rng.uniform_range(0.0, std::f64::consts::TAU))
                }
                TrajectoryKind::Arc => {
                    let frac = if spec.n_views == 1 {
                        0.5
                    } else {
                        i as f64 / (spec.n_views - 1) as f64
                    };
                    let jitter = rng.uniform() - 0.5;
                    (spec.elevation + jitter * spec.elevation_range, frac * spec.azimuth_span)
                }
            };
            let dir = Vector3::new(elev.cos() * azim.cos(), elev.cos() * azim.sin(), elev.sin());
            Pose::look_at(center + dir * spec.radius, center, Vector3::z())
        })
        .collect();
    Ok(poses)
}
