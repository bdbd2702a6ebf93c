//! Splits training rays into positive, negative and masked sets for one
//! target object, from instance masks and bounding-box entry order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{CameraIntrinsics, Frame, ObjectSpec, Raster, SceneDataset};
use crate::error::{Error, Result};
use crate::volrender::{clip_to_aabb, pixel_ray};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RayClass {
    Positive,
    Negative,
    Masked,
}

/// Class of a pixel ray plus whether it should be left out of training
/// because it never enters the target box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RayLabel {
    pub class: RayClass,
    pub droppable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifiedPixel {
    pub frame: usize,
    pub u: u32,
    pub v: u32,
    pub class: RayClass,
    pub gt_color: Option<[f32; 3]>,
    /// Ray distance; absent when the frame has no depth there.
    pub gt_depth: Option<f32>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positive: usize,
    pub negative: usize,
    pub masked: usize,
    pub dropped: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.positive + self.negative + self.masked + self.dropped
    }

    fn add(&mut self, label: RayLabel) {
        if label.droppable {
            self.dropped += 1;
            return;
        }
        match label.class {
            RayClass::Positive => self.positive += 1,
            RayClass::Negative => self.negative += 1,
            RayClass::Masked => self.masked += 1,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RayIndex {
    pub target: u8,
    pub positive: Vec<ClassifiedPixel>,
    pub negative: Vec<ClassifiedPixel>,
    pub masked: Vec<ClassifiedPixel>,
    pub dropped: usize,
    pub per_frame: Vec<ClassCounts>,
}

impl RayIndex {
    pub fn counts(&self) -> ClassCounts {
        ClassCounts {
            positive: self.positive.len(),
            negative: self.negative.len(),
            masked: self.masked.len(),
            dropped: self.dropped,
        }
    }
}

/// Classifies the ray through pixel `(u, v)` of `frame`.
///
/// `others` may include the target itself; it is skipped by id.
pub fn classify_ray(
    intrinsics: &CameraIntrinsics,
    frame: &Frame,
    u: u32,
    v: u32,
    target: &ObjectSpec,
    others: &[ObjectSpec],
) -> Result<RayLabel> {
    let id = frame.mask.get(u, v);
    let ray = pixel_ray(intrinsics, &frame.pose, u as f64, v as f64);
    let target_near = clip_to_aabb(&ray, &target.aabb()).map(|r| r.t_near);
    let class = if id == target.id {
        RayClass::Positive
    } else if id == 0 {
        RayClass::Negative
    } else {
        let other = others
            .iter()
            .find(|o| o.id == id)
            .ok_or(Error::UndeclaredInstanceId(id))?;
        let other_near = clip_to_aabb(&ray, &other.aabb()).map(|r| r.t_near);
        match (other_near, target_near) {
            (Some(a), Some(b)) if a <= b => RayClass::Masked,
            _ => RayClass::Negative,
        }
    };
    Ok(RayLabel {
        class,
        droppable: target_near.is_none(),
    })
}

fn classify_frame(
    k: &CameraIntrinsics,
    frame: &Frame,
    target: &ObjectSpec,
    objects: &[ObjectSpec],
) -> Result<Vec<RayLabel>> {
    let mut labels = Vec::with_capacity(k.n_pixels());
    for v in 0..k.height {
        for u in 0..k.width {
            labels.push(classify_ray(k, frame, u, v, target, objects)?);
        }
    }
    Ok(labels)
}

/// Classifies every pixel of every frame. Frames are processed in parallel
/// and concatenated in order.
pub fn build_ray_index(dataset: &SceneDataset, target: u8) -> Result<RayIndex> {
    let spec = dataset
        .object(target)
        .ok_or(Error::UndeclaredInstanceId(target))?
        .clone();
    let k = dataset.intrinsics;
    let labels: Vec<Vec<RayLabel>> = dataset
        .frames
        .par_iter()
        .map(|f| classify_frame(&k, f, &spec, &dataset.objects))
        .collect::<Result<_>>()?;

    let mut index = RayIndex {
        target,
        ..Default::default()
    };
    for (fi, (frame, labels)) in dataset.frames.iter().zip(&labels).enumerate() {
        let mut counts = ClassCounts::default();
        for (i, label) in labels.iter().enumerate() {
            counts.add(*label);
            if label.droppable {
                index.dropped += 1;
                continue;
            }
            let (u, v) = (i as u32 % k.width, i as u32 / k.width);
            let positive = label.class == RayClass::Positive;
            let depth = frame.depth.get(u, v);
            let px = ClassifiedPixel {
                frame: fi,
                u,
                v,
                class: label.class,
                gt_color: positive.then(|| frame.color(u, v)),
                gt_depth: (positive && depth > 0.0).then_some(depth),
            };
            match label.class {
                RayClass::Positive => index.positive.push(px),
                RayClass::Negative => index.negative.push(px),
                RayClass::Masked => index.masked.push(px),
            }
        }
        index.per_frame.push(counts);
    }
    Ok(index)
}

pub const POSITIVE_COLOR: [u8; 3] = [245, 140, 30];
pub const NEGATIVE_COLOR: [u8; 3] = [60, 180, 75];
pub const MASKED_COLOR: [u8; 3] = [240, 120, 200];
pub const DROPPED_COLOR: [u8; 3] = [0, 0, 0];

/// One color per class for visual inspection; dropped rays are black.
pub fn class_image(dataset: &SceneDataset, frame: usize, target: u8) -> Result<Raster<[u8; 3]>> {
    let spec = dataset.object(target).ok_or(Error::UndeclaredInstanceId(target))?;
    let f = dataset
        .frames
        .get(frame)
        .ok_or_else(|| crate::error::invalid("frame", "index out of range"))?;
    let k = dataset.intrinsics;
    let px = classify_frame(&k, f, spec, &dataset.objects)?
        .into_iter()
        .map(|l| match (l.droppable, l.class) {
            (true, _) => DROPPED_COLOR,
            (_, RayClass::Positive) => POSITIVE_COLOR,
            (_, RayClass::Negative) => NEGATIVE_COLOR,
            (_, RayClass::Masked) => MASKED_COLOR,
        })
        .collect();
    Raster::from_vec(k.width, k.height, px)
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector3;

    use super::*;
    use crate::datamodel::{Aabb, Pose, Rng};
    use crate::synthscene::{four_objects, make_dataset, TrajectorySpec};

    fn spec(id: u8, min: [f64; 3], max: [f64; 3]) -> ObjectSpec {
        ObjectSpec {
            id,
            name: format!("o{id}"),
            aabb_min: min,
            aabb_max: max,
        }
    }

    /// Camera at the origin looking down +z with a uniform mask.
    fn frame(mask: u8) -> (CameraIntrinsics, Frame) {
        let k = CameraIntrinsics::centered(9, 9, 10.0);
        let f = Frame {
            rgb: Raster::filled(9, 9, [10, 20, 30]),
            depth: Raster::filled(9, 9, 3.0),
            mask: Raster::filled(9, 9, mask),
            pose: Pose::identity(),
        };
        (k, f)
    }

    #[test]
    fn target_id_is_positive() {
        let (k, f) = frame(1);
        let t = spec(1, [-1.0, -1.0, 2.0], [1.0, 1.0, 4.0]);
        let l = classify_ray(&k, &f, 4, 4, &t, &[]).unwrap();
        assert_eq!(l, RayLabel { class: RayClass::Positive, droppable: false });
    }

    #[test]
    fn occluder_in_front_is_masked() {
        let (k, f) = frame(2);
        let t = spec(1, [-1.0, -1.0, 4.0], [1.0, 1.0, 6.0]);
        let front = spec(2, [-1.0, -1.0, 1.0], [1.0, 1.0, 2.0]);
        let l = classify_ray(&k, &f, 4, 4, &t, &[t.clone(), front]).unwrap();
        assert_eq!(l.class, RayClass::Masked);
        let behind = spec(2, [-1.0, -1.0, 7.0], [1.0, 1.0, 8.0]);
        let l = classify_ray(&k, &f, 4, 4, &t, &[behind]).unwrap();
        assert_eq!(l.class, RayClass::Negative);
    }

    #[test]
    fn equal_entry_is_masked() {
        let (k, f) = frame(2);
        let t = spec(1, [-1.0, -1.0, 2.0], [1.0, 1.0, 4.0]);
        let o = spec(2, [-2.0, -2.0, 2.0], [2.0, 2.0, 3.0]);
        assert_eq!(classify_ray(&k, &f, 4, 4, &t, &[o]).unwrap().class, RayClass::Masked);
    }

    #[test]
    fn background_through_box_is_negative() {
        let (k, f) = frame(0);
        let t = spec(1, [-1.0, -1.0, 2.0], [1.0, 1.0, 4.0]);
        let l = classify_ray(&k, &f, 4, 4, &t, &[]).unwrap();
        assert_eq!(l, RayLabel { class: RayClass::Negative, droppable: false });
    }

    #[test]
    fn missing_the_box_is_droppable() {
        let (k, f) = frame(0);
        let t = spec(1, [5.0, 5.0, 2.0], [6.0, 6.0, 4.0]);
        assert!(classify_ray(&k, &f, 4, 4, &t, &[]).unwrap().droppable);
    }

    #[test]
    fn undeclared_id() {
        let (k, f) = frame(9);
        let t = spec(1, [-1.0, -1.0, 2.0], [1.0, 1.0, 4.0]);
        let e = classify_ray(&k, &f, 4, 4, &t, &[]).unwrap_err();
        assert_eq!(e.to_string(), "undeclared instance id 9");
    }

    #[test]
    fn fully_covered_frame_is_positive() {
        let (k, f) = frame(1);
        let ds = SceneDataset {
            intrinsics: k,
            frames: vec![f],
            objects: vec![spec(1, [-5.0, -5.0, 1.0], [5.0, 5.0, 5.0])],
        };
        let idx = build_ray_index(&ds, 1).unwrap();
        assert_eq!(idx.positive.len(), 81);
        assert_eq!(idx.positive[0].gt_color, Some([10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]));
        assert_eq!(idx.positive[0].gt_depth, Some(3.0));
        assert!(idx.negative.is_empty() && idx.masked.is_empty());
    }

    /// First entry into `b` by marching at 0.05 mm then bisecting. Shares
    /// no code with the slab test.
    fn march_entry(o: &Vector3<f64>, d: &Vector3<f64>, b: &Aabb, tol: f64) -> Option<f64> {
        let inside = |t: f64| {
            let p = o + d * t;
            b.contains(&[p.x, p.y, p.z], tol)
        };
        if inside(0.01) {
            return Some(0.01);
        }
        let step = 5e-5;
        let mut t = 0.01;
        while t < 3.0 {
            if inside(t + step) {
                let (mut lo, mut hi) = (t, t + step);
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    if inside(mid) {
                        hi = mid
                    } else {
                        lo = mid
                    }
                }
                return Some(hi);
            }
            t += step;
        }
        None
    }

    fn scene_dataset() -> SceneDataset {
        let k = CameraIntrinsics::centered(80, 60, 90.0);
        let traj = TrajectorySpec {
            min_elevation: 0.2,
            ..TrajectorySpec::hemisphere([0.0, 0.0, 0.05], 0.6, 6)
        };
        make_dataset(&four_objects(), &k, &traj, &mut Rng::new(4), 1.25).unwrap()
    }

    #[test]
    fn cup_occlusion_matches_geometry() {
        let ds = scene_dataset();
        let cup = ds.object_by_name("cup").unwrap().clone();
        let idx = build_ray_index(&ds, cup.id).unwrap();
        let k = ds.intrinsics;
        let mut any_masked = false;
        for (fi, f) in ds.frames.iter().enumerate() {
            let mut oracle_masked = 0usize;
            let mut ambiguous = 0usize;
            for v in 0..k.height {
                for u in 0..k.width {
                    let id = f.mask.get(u, v);
                    if id == 0 || id == cup.id {
                        continue;
                    }
                    let ray = pixel_ray(&k, &f.pose, u as f64, v as f64);
                    let other = ds.object(id).unwrap().aabb();
                    let tc = march_entry(&ray.origin, &ray.direction, &cup.aabb(), 0.0);
                    let to = march_entry(&ray.origin, &ray.direction, &other, 0.0);
                    // Grazing rays whose passage is shorter than the march step.
                    let grazing = tc.is_none() && march_entry(&ray.origin, &ray.direction, &cup.aabb(), 1e-4).is_some()
                        || to.is_none() && march_entry(&ray.origin, &ray.direction, &other, 1e-4).is_some();
                    if grazing {
                        ambiguous += 1;
                    } else if let (Some(tc), Some(to)) = (tc, to) {
                        if (tc - to).abs() < 1e-3 {
                            ambiguous += 1;
                        } else if to < tc {
                            oracle_masked += 1;
                        }
                    }
                }
            }
            let got = idx.per_frame[fi].masked;
            assert!(got >= oracle_masked && got <= oracle_masked + ambiguous, "frame {fi}: {got} vs {oracle_masked}");
            if ambiguous == 0 {
                assert_eq!(got > 0, oracle_masked > 0, "frame {fi}");
            }
            any_masked |= got > 0;
        }
        assert!(any_masked, "trajectory never occludes the cup");
    }

    #[test]
    fn partition_and_soundness() {
        let ds = scene_dataset();
        let k = ds.intrinsics;
        for id in [1u8, 2, 3, 4] {
            let idx = build_ray_index(&ds, id).unwrap();
            assert_eq!(idx.counts().total(), k.n_pixels() * ds.frames.len());
            let b = ds.object(id).unwrap().aabb();
            for p in &idx.positive {
                let f = &ds.frames[p.frame];
                let d = p.gt_depth.unwrap() as f64;
                let x = pixel_ray(&k, &f.pose, p.u as f64, p.v as f64).at(d);
                assert!(b.contains(&[x.x, x.y, x.z], 1e-5));
            }
            let mut seen = std::collections::HashSet::new();
            for p in idx.positive.iter().chain(&idx.negative).chain(&idx.masked) {
                assert!(seen.insert((p.frame, p.u, p.v)));
                assert_eq!(p.gt_color.is_some(), p.class == RayClass::Positive);
            }
        }
    }

    #[test]
    fn thread_count_does_not_matter() {
        let ds = scene_dataset();
        let a = build_ray_index(&ds, 4).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| build_ray_index(&ds, 4).unwrap());
        assert_eq!(a.positive, b.positive);
        assert_eq!(a.masked, b.masked);
        assert_eq!(a.per_frame, b.per_frame);
    }

    #[test]
    fn class_image_colors() {
        let ds = scene_dataset();
        let img = class_image(&ds, 0, 4).unwrap();
        let idx = build_ray_index(&ds, 4).unwrap();
        let n = |c| img.data().iter().filter(|&&p| p == c).count();
        assert_eq!(n(POSITIVE_COLOR), idx.per_frame[0].positive);
        assert_eq!(n(MASKED_COLOR), idx.per_frame[0].masked);
    }
}
