//! Pixel rays, box clipping, sample placement and the emission-absorption
//! quadrature (with its reverse pass).
//!
//! Quadrature convention: `ts` holds `N+1` increasing distances; samples
//! `i = 0..N` are evaluated at `ts[i]` with interval `ts[i+1] - ts[i]`.

use nalgebra::Vector3;

use crate::datamodel::{Aabb, CameraIntrinsics, Pose, Rng, NEAR_LIMIT};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// World-space ray through the continuous pixel coordinate `(u, v)`
/// (pixel centers at integer + 0.5), unclipped.
pub fn pixel_ray(k: &CameraIntrinsics, pose: &Pose, u: f64, v: f64) -> Ray {
    let dir = pose.rotate(&k.camera_direction(u, v)).normalize();
    Ray {
        origin: pose.center(),
        direction: dir,
        t_near: 0.0,
        t_far: f64::INFINITY,
    }
}

/// Slab-method entry/exit distances, without the near limit.
pub fn slab(origin: &Vector3<f64>, dir: &Vector3<f64>, aabb: &Aabb) -> Option<(f64, f64)> {
    let mut entry = f64::NEG_INFINITY;
    let mut exit = f64::INFINITY;
    for k in 0..3 {
        if dir[k] == 0.0 {
            if origin[k] < aabb.min[k] || origin[k] > aabb.max[k] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[k];
        let t0 = (aabb.min[k] - origin[k]) * inv;
        let t1 = (aabb.max[k] - origin[k]) * inv;
        entry = entry.max(t0.min(t1));
        exit = exit.min(t0.max(t1));
    }
    (exit >= entry.max(0.0)).then_some((entry, exit))
}

/// Clips a ray to a box: `t_near = max(entry, NEAR_LIMIT)`. `None` when
/// the box is missed or lies entirely closer than the near limit.
pub fn clip_to_aabb(ray: &Ray, aabb: &Aabb) -> Option<Ray> {
    let (entry, exit) = slab(&ray.origin, &ray.direction, aabb)?;
    let t_near = entry.max(NEAR_LIMIT);
    if exit <= t_near {
        return None;
    }
    Some(Ray {
        t_near,
        t_far: exit,
        ..*ray
    })
}

/// Places `n_samples + 1` distances in `[t_near, t_far]`: one per equal
/// stratum, uniformly jittered when `stratified`, else at stratum midpoints.
pub fn sample_ray(ray: &Ray, n_samples: usize, rng: Option<&mut Rng>, out: &mut Vec<f64>) {
    let n = n_samples + 1;
    let width = (ray.t_far - ray.t_near) / n as f64;
    out.clear();
    match rng {
        Some(rng) => {
            for i in 0..n {
                out.push(ray.t_near + (i as f64 + rng.uniform()) * width);
            }
        }
        None => {
            for i in 0..n {
                out.push(ray.t_near + (i as f64 + 0.5) * width);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderResult<T> {
    pub color: [T; 3],
    pub depth: T,
    pub opacity: T,
    /// Transmittance past the last sample.
    pub t_final: T,
}

/// Per-sample quantities kept for [`integrate_backward`].
#[derive(Clone, Debug, Default)]
pub struct IntegrateCache<T> {
    pub weights: Vec<T>,
    /// Transmittance before each sample.
    pub trans: Vec<T>,
    /// `exp(-sigma_i * delta_i)`.
    pub decay: Vec<T>,
}

/// Emission-absorption quadrature over `sigmas.len() == ts.len() - 1` samples.
pub fn integrate<T: Real>(
    sigmas: &[T],
    colors: &[[T; 3]],
    ts: &[T],
    cache: &mut IntegrateCache<T>,
) -> RenderResult<T> {
    let n = sigmas.len();
    debug_assert_eq!(colors.len(), n);
    debug_assert_eq!(ts.len(), n + 1);
    cache.weights.clear();
    cache.trans.clear();
    cache.decay.clear();
    let mut color = [T::zero(); 3];
    let mut depth = T::zero();
    let mut optical = T::zero();
    for i in 0..n {
        let a = sigmas[i] * (ts[i + 1] - ts[i]);
        let trans = (-optical).exp();
        let decay = (-a).exp();
        let w = trans * (T::one() - decay);
        cache.trans.push(trans);
        cache.decay.push(decay);
        cache.weights.push(w);
        for k in 0..3 {
            color[k] += w * colors[i][k];
        }
        depth += w * ts[i];
        optical += a;
    }
    let t_final = (-optical).exp();
    RenderResult {
        color,
        depth,
        opacity: T::one() - t_final,
        t_final,
    }
}

#[derive(Clone, Debug, Default)]
pub struct IntegrateGrads<T> {
    pub sigmas: Vec<T>,
    pub colors: Vec<[T; 3]>,
    pub ts: Vec<T>,
}

/// Reverse pass of [`integrate`] for upstream gradients on color, depth and
/// final transmittance.
pub fn integrate_backward<T: Real>(
    d_color: [T; 3],
    d_depth: T,
    d_t_final: T,
    sigmas: &[T],
    colors: &[[T; 3]],
    ts: &[T],
    cache: &IntegrateCache<T>,
    out: &mut IntegrateGrads<T>,
) {
    let n = sigmas.len();
    out.sigmas.clear();
    out.sigmas.resize(n, T::zero());
    out.colors.clear();
    out.colors.resize(n, [T::zero(); 3]);
    out.ts.clear();
    out.ts.resize(n + 1, T::zero());
    let t_final = if n == 0 {
        T::one()
    } else {
        cache.trans[n - 1] * cache.decay[n - 1]
    };
    // d/da_k of sum_i w_i s_i  =  T_k e^{-a_k} s_k - sum_{i>k} w_i s_i;
    // T_final = exp(-sum a) contributes -T_final to every a_k.
    let mut suffix = T::zero();
    for k in (0..n).rev() {
        let s = d_color[0] * colors[k][0]
            + d_color[1] * colors[k][1]
            + d_color[2] * colors[k][2]
            + d_depth * ts[k];
        let w = cache.weights[k];
        let d_a = cache.trans[k] * cache.decay[k] * s - suffix - d_t_final * t_final;
        suffix += w * s;
        let delta = ts[k + 1] - ts[k];
        out.sigmas[k] = d_a * delta;
        out.colors[k] = [0, 1, 2].map(|c| w * d_color[c]);
        let d_delta = d_a * sigmas[k];
        out.ts[k + 1] += d_delta;
        out.ts[k] += d_depth * w - d_delta;
    }
}
