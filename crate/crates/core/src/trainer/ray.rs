use nalgebra::Vector3;

use super::occupancy::OccupancyGrid;
use super::loss::{depth_gate, norm_and_grad, rgb_residual, NegativeTarget, OPAQUE_TRANSMITTANCE};
use crate::error::Result;
use crate::hashfield::{BackwardScratch, FieldGrads, HashField, SampleCache};
use crate::isolation::RayClass;
use crate::scalar::Real;
use crate::volrender::{integrate, integrate_backward, IntegrateCache, IntegrateGrads, RenderResult};

/// Per-worker buffers for marching and differentiating one ray at a time.
pub struct RayWork<T> {
    caches: Vec<SampleCache<T>>,
    scratch: BackwardScratch<T>,
    sigmas: Vec<T>,
    colors: Vec<[T; 3]>,
    ts: Vec<T>,
    points: Vec<Vector3<f64>>,
    skipped: Vec<bool>,
    icache: IntegrateCache<T>,
    igrads: IntegrateGrads<T>,
}

impl<T: Real> RayWork<T> {
    pub fn new(field: &HashField<T>) -> Self {
        Self {
            caches: Vec::new(),
            scratch: field.new_scratch(),
            sigmas: Vec::new(),
            colors: Vec::new(),
            ts: Vec::new(),
            points: Vec::new(),
            skipped: Vec::new(),
            icache: IntegrateCache::default(),
            igrads: IntegrateGrads::default(),
        }
    }
}

fn lit3<T: Real>(v: &Vector3<f64>) -> [T; 3] {
    [T::lit(v.x), T::lit(v.y), T::lit(v.z)]
}

/// How samples along a ray are evaluated.
#[derive(Clone, Copy, Default)]
pub struct MarchOptions<'a> {
    /// Stop once transmittance falls below the opacity threshold.
    pub early_stop: bool,
    /// Samples in empty cells get zero density without touching the field.
    pub occupancy: Option<&'a OccupancyGrid>,
}

/// Marches the samples at `ts[..n]` (with `ts[n]` closing the last interval).
/// Leaves the per-sample state in `work`.
fn march<T: Real>(
    field: &HashField<T>,
    work: &mut RayWork<T>,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    ts: &[f64],
    opts: MarchOptions,
) -> Result<RenderResult<T>> {
    let n = ts.len().saturating_sub(1);
    while work.caches.len() < n {
        work.caches.push(field.new_cache());
    }
    work.sigmas.clear();
    work.colors.clear();
    work.points.clear();
    work.skipped.clear();
    work.ts.clear();
    let d = lit3::<T>(dir);
    let mut optical = 0.0f64;
    let stop = OPAQUE_TRANSMITTANCE.ln().abs();
    for i in 0..n {
        let x = origin + dir * ts[i];
        let skip = opts.occupancy.map_or(false, |g| !g.is_occupied(&x));
        work.skipped.push(skip);
        work.points.push(x);
        work.ts.push(T::lit(ts[i]));
        if skip {
            work.sigmas.push(T::zero());
            work.colors.push([T::zero(); 3]);
            continue;
        }
        let out = field.forward(lit3(&x), d, &mut work.caches[i])?;
        work.sigmas.push(out.sigma);
        work.colors.push(out.color);
        optical += out.sigma.to_f64_lossy() * (ts[i + 1] - ts[i]);
        if opts.early_stop && optical > stop {
            work.ts.push(T::lit(ts[i + 1]));
            return Ok(integrate(&work.sigmas, &work.colors, &work.ts, &mut work.icache));
        }
    }
    if n > 0 {
        work.ts.push(T::lit(ts[n]));
    }
    Ok(integrate(&work.sigmas, &work.colors, &work.ts, &mut work.icache))
}

/// Forward-only render of one ray.
pub fn render_ray<T: Real>(
    field: &HashField<T>,
    work: &mut RayWork<T>,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    ts: &[f64],
    opts: MarchOptions,
) -> Result<RenderResult<T>> {
    if ts.len() < 2 {
        return Ok(empty_result());
    }
    march(field, work, origin, dir, ts, opts)
}

fn empty_result<T: Real>() -> RenderResult<T> {
    RenderResult {
        color: [T::zero(); 3],
        depth: T::zero(),
        opacity: T::zero(),
        t_final: T::one(),
    }
}

/// Supervision attached to one ray in a batch.
#[derive(Clone, Copy, Debug)]
pub struct RaySupervision {
    pub class: RayClass,
    pub gt_color: Option<[f64; 3]>,
    pub gt_depth: Option<f64>,
    pub c_random: [f64; 3],
}

#[derive(Clone, Copy, Debug)]
pub struct LossSettings {
    pub mode: NegativeTarget,
    pub use_depth: bool,
    pub w_depth: f64,
    /// Multiplier applied to every gradient (batch normalization).
    pub scale: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RayOutcome {
    pub loss_rgb: f64,
    pub loss_depth: f64,
    /// Gradient w.r.t. the left tangent increment `[ω, v]` of the camera
    /// pose that produced the ray, rotating about the camera center.
    pub pose_grad: [f64; 6],
}

/// Loss of one ray and its gradients. Field gradients (already multiplied
/// by `settings.scale`) are appended to `grads`. Sample distances are
/// treated as constants.
#[allow(clippy::too_many_arguments)]
pub fn ray_loss_backward<T: Real>(
    field: &HashField<T>,
    work: &mut RayWork<T>,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    ts: &[f64],
    sup: &RaySupervision,
    settings: &LossSettings,
    opts: MarchOptions,
    grads: &mut FieldGrads<T>,
) -> Result<RayOutcome> {
    let r = if ts.len() < 2 {
        empty_result()
    } else {
        march(field, work, origin, dir, ts, opts)?
    };
    let Some(e) = rgb_residual(
        sup.class,
        r.color,
        r.t_final,
        sup.gt_color.map(|c| c.map(T::lit)),
        sup.c_random.map(T::lit),
        settings.mode,
    ) else {
        return Ok(RayOutcome::default());
    };
    let (loss_rgb, g_e) = norm_and_grad(e);
    let scale = T::lit(settings.scale);
    let d_color = g_e.map(|g| g * scale);
    let d_t_final = match settings.mode {
        NegativeTarget::Composited => {
            (0..3).fold(T::zero(), |a, k| a + d_color[k] * T::lit(sup.c_random[k]))
        }
        NegativeTarget::Literal => T::zero(),
    };
    let mut loss_depth = T::zero();
    let mut d_depth = T::zero();
    if settings.use_depth {
        if let Some(d) = depth_gate(sup.class, r.t_final, sup.gt_depth.map(T::lit)) {
            let diff = r.depth - d;
            loss_depth = diff.abs();
            d_depth = diff.signum() * T::lit(settings.w_depth) * scale;
            if diff == T::zero() {
                d_depth = T::zero();
            }
        }
    }
    let mut outcome = RayOutcome {
        loss_rgb: loss_rgb.to_f64_lossy(),
        loss_depth: loss_depth.to_f64_lossy(),
        pose_grad: [0.0; 6],
    };
    let n = work.sigmas.len();
    if n == 0 {
        return Ok(outcome);
    }
    integrate_backward(
        d_color,
        d_depth,
        d_t_final,
        &work.sigmas,
        &work.colors,
        &work.ts,
        &work.icache,
        &mut work.igrads,
    );
    let center = *origin;
    let mut g_rot = Vector3::zeros();
    let mut g_trans = Vector3::zeros();
    for i in (0..n).filter(|&i| !work.skipped[i]) {
        let pg = field.backward(
            work.igrads.sigmas[i],
            work.igrads.colors[i],
            &work.caches[i],
            grads,
            &mut work.scratch,
        );
        let gx = Vector3::new(
            pg.position[0].to_f64_lossy(),
            pg.position[1].to_f64_lossy(),
            pg.position[2].to_f64_lossy(),
        );
        let gd = Vector3::new(
            pg.direction[0].to_f64_lossy(),
            pg.direction[1].to_f64_lossy(),
            pg.direction[2].to_f64_lossy(),
        );
        // x = c + t R d_cam: δx = v + ω × (x − c), δd = ω × d.
        g_rot += (work.points[i] - center).cross(&gx) + dir.cross(&gd);
        g_trans += gx;
    }
    outcome.pose_grad = [g_rot.x, g_rot.y, g_rot.z, g_trans.x, g_trans.y, g_trans.z];
    Ok(outcome)
}
