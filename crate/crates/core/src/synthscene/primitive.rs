use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::datamodel::Aabb;
use crate::error::{invalid, Result};

/// Surface color as a function of world position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Uniform { color: [f64; 3] },
    /// 3D checkerboard with cubes of side `period` meters.
    Checker { a: [f64; 3], b: [f64; 3], period: f64 },
    /// Slabs of width `period` along `axis` (0, 1 or 2).
    Stripes { a: [f64; 3], b: [f64; 3], period: f64, axis: usize },
}

impl Texture {
    pub fn albedo(&self, p: &Vector3<f64>) -> [f64; 3] {
        match self {
            Texture::Uniform { color } => *color,
            Texture::Checker { a, b, period } => {
                let s: i64 = (0..3).map(|k| (p[k] / period).floor() as i64).sum();
                if s.rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
            Texture::Stripes { a, b, period, axis } => {
                if ((p[*axis] / period).floor() as i64).rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Box { min: [f64; 3], max: [f64; 3] },
    /// Capped cylinder from `base` along unit `axis` for `height` meters.
    Cylinder {
        base: [f64; 3],
        axis: [f64; 3],
        radius: f64,
        height: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Vector3<f64>,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// Smallest root of `a t^2 + 2 b t + c` above `t_min`.
fn smallest_root(a: f64, b: f64, c: f64, t_min: f64) -> Option<(f64, f64)> {
    let disc = b * b - a * c;
    if disc < 0.0 || a == 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let t0 = (-b - s) / a;
    let t1 = (-b + s) / a;
    Some((t0, t1)).filter(|&(_, t1)| t1 >= t_min)
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Sphere { radius, .. } => *radius > 0.0,
            Shape::Box { min, max } => (0..3).all(|k| min[k] < max[k]),
            Shape::Cylinder {
                axis,
                radius,
                height,
                ..
            } => *radius > 0.0 && *height > 0.0 && v3(*axis).norm() > 1e-12,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("primitive", format!("{self:?}")))
        }
    }

    pub fn bounds(&self) -> Aabb {
        match self {
            Shape::Sphere { center, radius } => Aabb {
                min: center.map(|c| c - radius),
                max: center.map(|c| c + radius),
            },
            Shape::Box { min, max } => Aabb {
                min: *min,
                max: *max,
            },
            Shape::Cylinder {
                base,
                axis,
                radius,
                height,
            } => {
                let a = v3(*axis).normalize();
                let top = v3(*base) + a * *height;
                let mut b = Aabb::empty();
                for k in 0..3 {
                    // Disc extent along axis k: r * sqrt(1 - a_k^2).
                    let e = radius * (1.0 - a[k] * a[k]).max(0.0).sqrt();
                    b.min[k] = base[k].min(top[k]) - e;
                    b.max[k] = base[k].max(top[k]) + e;
                }
                b
            }
        }
    }

    /// Nearest intersection with `t >= t_min` along a unit-direction ray.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>, t_min: f64) -> Option<Hit> {
        match self {
            Shape::Sphere { center, radius } => {
                let oc = o - v3(*center);
                let (t0, t1) = smallest_root(d.dot(d), oc.dot(d), oc.dot(&oc) - radius * radius, t_min)?;
                let t = if t0 >= t_min { t0 } else { t1 };
                Some(Hit {
                    t,
                    normal: (o + d * t - v3(*center)) / *radius,
                })
            }
            Shape::Box { min, max } => {
                let mut entry = (f64::NEG_INFINITY, 0usize);
                let mut exit = (f64::INFINITY, 0usize);
                for k in 0..3 {
                    if d[k] == 0.0 {
                        if o[k] < min[k] || o[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let t0 = (min[k] - o[k]) / d[k];
                    let t1 = (max[k] - o[k]) / d[k];
                    let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
                    if lo > entry.0 {
                        entry = (lo, k);
                    }
                    if hi < exit.0 {
                        exit = (hi, k);
                    }
                }
                if exit.0 < entry.0 || exit.0 < t_min {
                    return None;
                }
                let (t, k) = if entry.0 >= t_min { entry } else { exit };
                let mut normal = Vector3::zeros();
                normal[k] = -d[k].signum();
                Some(Hit { t, normal })
            }
            Shape::Cylinder {
                base,
                axis,
                radius,
                height,
            } => {
                let a = v3(*axis).normalize();
                let b = v3(*base);
                let oc = o - b;
                let mut best: Option<Hit> = None;
                let mut consider = |t: f64, n: Vector3<f64>| {
                    if t >= t_min && best.map_or(true, |h| t < h.t) {
                        best = Some(Hit { t, normal: n });
                    }
                };
                // Side: |(p - b) - ((p - b).a) a| = r.
                let dp = d - a * d.dot(&a);
                let op = oc - a * oc.dot(&a);
                if let Some((t0, t1)) =
                    smallest_root(dp.dot(&dp), op.dot(&dp), op.dot(&op) - radius * radius, t_min)
                {
                    for t in [t0, t1] {
                        let h = (oc + d * t).dot(&a);
                        if (0.0..=*height).contains(&h) {
                            let n = (op + dp * t) / *radius;
                            consider(t, n);
                        }
                    }
                }
                // Caps.
                let dn = d.dot(&a);
                if dn != 0.0 {
                    for (h, n) in [(0.0, -a), (*height, a)] {
                        let t = (h - oc.dot(&a)) / dn;
                        let q = oc + d * t - a * h;
                        if q.norm_squared() <= radius * radius {
                            consider(t, n);
                        }
                    }
                }
                best
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: Texture,
    /// Instance id; 0 for background geometry.
    pub object_id: u8,
    #[serde(default)]
    pub name: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed-step march to the first point inside the shape.
    fn march(shape: &Shape, o: &Vector3<f64>, d: &Vector3<f64>, t_max: f64, steps: usize) -> Option<f64> {
        let inside = |p: Vector3<f64>| match shape {
            Shape::Sphere { center, radius } => (p - v3(*center)).norm() <= *radius,
            Shape::Box { min, max } => (0..3).all(|k| p[k] >= min[k] && p[k] <= max[k]),
            Shape::Cylinder {
                base,
                axis,
                radius,
                height,
            } => {
                let a = v3(*axis).normalize();
                let q = p - v3(*base);
                let h = q.dot(&a);
                (0.0..=*height).contains(&h) && (q - a * h).norm() <= *radius
            }
        };
        let dt = t_max / steps as f64;
        (0..steps).map(|i| i as f64 * dt).find(|&t| inside(o + d * t))
    }

    #[test]
    fn closed_forms_agree_with_ray_march() {
        let shapes = [
            Shape::Sphere {
                center: [0.1, -0.05, 0.3],
                radius: 0.07,
            },
            Shape::Box {
                min: [-0.1, -0.2, 0.0],
                max: [0.15, 0.05, 0.04],
            },
            Shape::Cylinder {
                base: [0.0, 0.0, 0.0],
                axis: [0.2, 0.1, 1.0],
                radius: 0.05,
                height: 0.12,
            },
        ];
        let o = Vector3::new(0.4, -0.5, 0.6);
        for shape in &shapes {
            let target = v3(shape.bounds().center());
            let d = (target - o).normalize();
            let exact = shape.intersect(&o, &d, 0.0).unwrap().t;
            let marched = march(shape, &o, &d, 2.0, 1_000_000).unwrap();
            assert!((exact - marched).abs() < 1e-4, "{shape:?}: {exact} vs {marched}");
        }
    }

    #[test]
    fn sphere_hit_on_axis() {
        let s = Shape::Sphere {
            center: [0.0, 0.0, 0.0],
            radius: 0.1,
        };
        let o = Vector3::new(0.0, 0.0, 1.0);
        let hit = s.intersect(&o, &-Vector3::z(), 0.0).unwrap();
        assert!((hit.t - 0.9).abs() < 1e-15);
        assert!((hit.normal - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn cylinder_bounds_enclose_samples() {
        let s = Shape::Cylinder {
            base: [0.1, 0.2, 0.0],
            axis: [1.0, 0.0, 1.0],
            radius: 0.03,
            height: 0.1,
        };
        let b = s.bounds();
        let a = Vector3::new(1.0, 0.0, 1.0).normalize();
        let u = Vector3::new(1.0, 0.0, -1.0).normalize();
        let w = Vector3::y();
        for i in 0..100 {
            let ang = i as f64 * 0.0628;
            for h in [0.0, 0.05, 0.1] {
                let p = Vector3::new(0.1, 0.2, 0.0) + a * h + (u * ang.cos() + w * ang.sin()) * 0.03;
                assert!(b.contains(&[p.x, p.y, p.z], 1e-12));
            }
        }
    }

    #[test]
    fn checker_alternates() {
        let t = Texture::Checker {
            a: [1.0; 3],
            b: [0.0; 3],
            period: 0.03,
        };
        assert_eq!(t.albedo(&Vector3::new(0.01, 0.01, 0.01)), [1.0; 3]);
        assert_eq!(t.albedo(&Vector3::new(0.04, 0.01, 0.01)), [0.0; 3]);
        assert_eq!(t.albedo(&Vector3::new(-0.01, 0.01, 0.01)), [0.0; 3]);
    }
}
