use nalgebra::Vector3;

use super::*;
use crate::datamodel::{Aabb, CameraIntrinsics, Frame, ObjectSpec, Raster};
use crate::hashfield::HashField;
use crate::isolation::RayClass;
use crate::synthscene::{make_dataset, Light, Primitive, SceneDescription, Shape, Table, Texture, TrajectorySpec};

fn tiny_config() -> TrainConfig {
    TrainConfig {
        n_steps: 30,
        rays_per_batch: 128,
        n_samples_per_ray: 24,
        field: FieldConfig {
            grid: HashGridConfig {
                n_levels: 4,
                table_size: 1 << 12,
                features_per_entry: 2,
                base_resolution: 8,
                finest_resolution: 64,
            },
            hidden_width: 16,
            ..FieldConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn sphere_dataset(n_views: usize, w: u32, h: u32) -> SceneDataset {
    let scene = SceneDescription {
        primitives: vec![Primitive {
            shape: Shape::Sphere {
                center: [0.0, 0.0, 0.05],
                radius: 0.05,
            },
            albedo: Texture::Checker {
                a: [0.9, 0.3, 0.2],
                b: [0.2, 0.3, 0.9],
                period: 0.02,
            },
            object_id: 1,
            name: "ball".into(),
        }],
        light: Light::default(),
        table: Some(Table {
            height: 0.0,
            texture: Texture::Uniform { color: [0.6, 0.55, 0.5] },
        }),
        background: [0.8, 0.85, 0.9],
    };
    let k = CameraIntrinsics::centered(w, h, w as f64 * 1.1);
    let traj = TrajectorySpec::hemisphere([0.0, 0.0, 0.05], 0.6, n_views);
    make_dataset(&scene, &k, &traj, &mut Rng::new(1), 1.25).unwrap()
}

#[test]
fn zero_steps_leave_field_untouched() {
    let ds = sphere_dataset(2, 32, 24);
    let cfg = TrainConfig {
        n_steps: 0,
        ..tiny_config()
    };
    let r = train(&ds, 1, &cfg).unwrap();
    let init = Field::new(cfg.field.clone(), ds.objects[0].aabb(), &mut Rng::new(cfg.seed).fork(stream::INIT)).unwrap();
    assert_eq!(r.field.params(), init.params());
    assert!(r.trace.is_empty());
    assert_eq!(r.poses, ds.poses());
}

#[test]
fn pose_lr_schedule() {
    let cfg = TrainConfig::default();
    assert!((cfg.pose_lr(0) - 3.3e-4).abs() < 1e-18);
    assert!((cfg.pose_lr(1999) - 1e-5).abs() < 1e-18);
    let mid = cfg.pose_lr(1000);
    assert!(mid < 3.3e-4 && mid > 1e-5);
    let bad = TrainConfig {
        pose_lr_end: 1e-3,
        ..cfg
    };
    assert!(bad.validate().is_err());
}

/// Two objects side by side with a tall wall of object 2 in front of
/// object 1 from some views.
fn occluded_dataset() -> SceneDataset {
    let scene = SceneDescription {
        primitives: vec![
            Primitive {
                shape: Shape::Sphere {
                    center: [0.0, 0.0, 0.05],
                    radius: 0.05,
                },
                albedo: Texture::Uniform { color: [0.9, 0.2, 0.2] },
                object_id: 1,
                name: "ball".into(),
            },
            Primitive {
                shape: Shape::Box {
                    min: [0.1, -0.1, 0.0],
                    max: [0.12, 0.1, 0.2],
                },
                albedo: Texture::Uniform { color: [0.2, 0.2, 0.9] },
                object_id: 2,
                name: "wall".into(),
            },
        ],
        light: Light::default(),
        table: None,
        background: [0.5; 3],
    };
    let k = CameraIntrinsics::centered(32, 24, 30.0);
    let traj = TrajectorySpec {
        kind: crate::synthscene::TrajectoryKind::Arc,
        elevation: 0.3,
        ..TrajectorySpec::hemisphere([0.0, 0.0, 0.05], 0.6, 4)
    };
    make_dataset(&scene, &k, &traj, &mut Rng::new(2), 1.25).unwrap()
}

#[test]
fn masked_rays_are_inert() {
    let ds = occluded_dataset();
    let index = build_ray_index(&ds, 1).unwrap();
    assert!(!index.masked.is_empty());
    let cfg = TrainConfig {
        n_steps: 8,
        ..tiny_config()
    };
    let a = train_with_index(&ds, &index, &cfg).unwrap();
    let mut stripped = index.clone();
    stripped.masked.clear();
    // Scramble the pixels behind the masked rays too.
    let mut scrambled = ds.clone();
    for p in &index.masked {
        let f = &mut scrambled.frames[p.frame];
        f.rgb.set(p.u, p.v, [255, 0, 255]);
        f.depth.set(p.u, p.v, 9.0);
    }
    let b = train_with_index(&scrambled, &stripped, &cfg).unwrap();
    assert_eq!(a.field.params(), b.field.params());
    assert_eq!(a.trace, b.trace);
}

#[test]
fn threads_do_not_change_the_trace() {
    let ds = sphere_dataset(3, 32, 24);
    let cfg = TrainConfig {
        n_steps: 6,
        optimize_extrinsics: true,
        ..tiny_config()
    };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| train(&ds, 1, &cfg).unwrap());
    let b = three.install(|| train(&ds, 1, &cfg).unwrap());
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.field.params(), b.field.params());
    assert_eq!(a.poses, b.poses);
}

#[test]
fn poses_move_only_when_optimized() {
    let ds = sphere_dataset(3, 32, 24);
    let frozen = train(&ds, 1, &TrainConfig { n_steps: 5, ..tiny_config() }).unwrap();
    assert_eq!(frozen.poses, ds.poses());
    let moving = train(
        &ds,
        1,
        &TrainConfig {
            n_steps: 5,
            optimize_extrinsics: true,
            ..tiny_config()
        },
    )
    .unwrap();
    assert!(moving.poses.iter().zip(ds.poses()).any(|(a, b)| a.max_abs_diff(&b) > 0.0));
}

#[test]
fn trace_csv_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let rows = [TraceRow {
        step: 0,
        loss_rgb: 0.5,
        loss_depth: 0.0,
        pose_lr: 3.3e-4,
    }];
    write_trace_csv(&rows, &path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text, "step,loss_rgb,loss_depth,pose_lr\n0,0.5,0,0.00033\n");
}

#[test]
fn diverged_field_reports_step() {
    let ds = sphere_dataset(2, 16, 12);
    let cfg = TrainConfig {
        n_steps: 3,
        field_lr: 1e30,
        ..tiny_config()
    };
    let err = train(&ds, 1, &cfg).unwrap_err();
    assert!(err.to_string().starts_with("training diverged at step"), "{err}");
}

#[test]
fn loss_decreases_on_sphere() {
    let ds = sphere_dataset(8, 40, 30);
    let cfg = TrainConfig {
        n_steps: 300,
        rays_per_batch: 256,
        n_samples_per_ray: 32,
        ..tiny_config()
    };
    let r = train(&ds, 1, &cfg).unwrap();
    let mean = |a: usize, b: usize| r.trace[a..b].iter().map(|t| t.loss_rgb).sum::<f64>() / (b - a) as f64;
    assert!(mean(250, 300) < 0.7 * mean(0, 30), "{} vs {}", mean(250, 300), mean(0, 30));
}

// ---- finite-difference micro problems ----------------------------------

fn micro_field() -> HashField<f64> {
    let cfg = FieldConfig {
        grid: HashGridConfig {
            n_levels: 3,
            table_size: 1 << 10,
            features_per_entry: 2,
            base_resolution: 4,
            finest_resolution: 16,
        },
        hidden_width: 16,
        grid_init_scale: 0.5,
        ..FieldConfig::default()
    };
    let aabb = Aabb::new([-0.2, -0.2, -0.2], [0.2, 0.2, 0.2]).unwrap();
    HashField::new(cfg, aabb, &mut Rng::new(77)).unwrap()
}

struct MicroRay {
    u: f64,
    v: f64,
    sup: RaySupervision,
    /// Sample distances, fixed across pose perturbations.
    ts: Vec<f64>,
}

fn micro_rays(k: &CameraIntrinsics, pose: &Pose, field: &HashField<f64>, rng: &mut Rng) -> Vec<MicroRay> {
    let classes = [RayClass::Positive, RayClass::Negative, RayClass::Positive, RayClass::Negative];
    classes
        .iter()
        .map(|&class| loop {
            let (u, v) = (rng.uniform_range(2.0, 14.0), rng.uniform_range(2.0, 10.0));
            let ray = pixel_ray(k, pose, u, v);
            if let Some(c) = clip_to_aabb(&ray, field.aabb()) {
                let mut ts = Vec::new();
                sample_ray(&c, 8, Some(rng), &mut ts);
                let positive = class == RayClass::Positive;
                break MicroRay {
                    u,
                    v,
                    ts,
                    sup: RaySupervision {
                        class,
                        gt_color: positive.then(|| [rng.uniform(), rng.uniform(), rng.uniform()]),
                        gt_depth: positive.then(|| rng.uniform_range(0.5, 0.7)),
                        c_random: [rng.uniform(), rng.uniform(), rng.uniform()],
                    },
                };
            }
        })
        .collect()
}

fn micro_loss(
    field: &HashField<f64>,
    k: &CameraIntrinsics,
    pose: &Pose,
    rays: &[MicroRay],
    settings: &LossSettings,
) -> (f64, [f64; 6], FieldGrads<f64>) {
    let mut work = RayWork::new(field);
    let mut grads = field.new_grads();
    let mut total = 0.0;
    let mut pg = [0.0; 6];
    for r in rays {
        let ray = pixel_ray(k, pose, r.u, r.v);
        let o = ray_loss_backward(
            field,
            &mut work,
            &ray.origin,
            &ray.direction,
            &r.ts,
            &r.sup,
            settings,
            MarchOptions::default(),
            &mut grads,
        )
        .unwrap();
        total += (o.loss_rgb + settings.w_depth * o.loss_depth) * settings.scale;
        for j in 0..6 {
            pg[j] += o.pose_grad[j];
        }
    }
    (total, pg, grads)
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn micro_camera() -> (CameraIntrinsics, Pose) {
    let k = CameraIntrinsics::centered(16, 12, 14.0);
    let pose = Pose::look_at(Vector3::new(0.35, -0.4, 0.3), Vector3::new(0.0, 0.0, 0.0), Vector3::z());
    (k, pose)
}

#[test]
fn pose_gradient_matches_finite_differences() {
    let field = micro_field();
    let (k, pose) = micro_camera();
    for (mode, seed) in [(NegativeTarget::Composited, 1), (NegativeTarget::Literal, 2), (NegativeTarget::Composited, 3)] {
        let rays = micro_rays(&k, &pose, &field, &mut Rng::new(seed));
        let settings = LossSettings {
            mode,
            use_depth: false,
            w_depth: 3.0,
            scale: 0.25,
        };
        let (_, pg, _) = micro_loss(&field, &k, &pose, &rays, &settings);
        let h = 1e-6;
        for j in 0..6 {
            let mut e = [0.0; 6];
            e[j] = h;
            let p = |s: f64| {
                let d: Vec<f64> = e.iter().map(|x| x * s).collect();
                pose.perturbed(&Vector3::new(d[0], d[1], d[2]), &Vector3::new(d[3], d[4], d[5]))
            };
            let fp = micro_loss(&field, &k, &p(1.0), &rays, &settings).0;
            let fm = micro_loss(&field, &k, &p(-1.0), &rays, &settings).0;
            let fd = (fp - fm) / (2.0 * h);
            let analytic = pg[j];
            assert!(rel_err(analytic, fd, 1e-4) < 1e-2, "mode {mode:?} component {j}: {analytic} vs {fd}");
        }
    }
}

#[test]
fn full_pipeline_parameter_gradients() {
    let mut field = micro_field();
    let (k, pose) = micro_camera();
    let rays = micro_rays(&k, &pose, &field, &mut Rng::new(5));
    // Make the depth gate open on the positive rays by saturating density.
    let settings = LossSettings {
        mode: NegativeTarget::Composited,
        use_depth: true,
        w_depth: 3.0,
        scale: 0.25,
    };
    let (_, _, grads) = micro_loss(&field, &k, &pose, &rays, &settings);
    let dense = grads.to_dense(field.n_params(), field.grid_len());
    let mut rng = Rng::new(9);
    let grid_len = field.grid_len();
    let mut checked = 0;
    for _ in 0..400 {
        // Bias the probes towards parameters that matter.
        let i = if rng.uniform() < 0.5 {
            grid_len + rng.below(field.n_params() - grid_len)
        } else {
            rng.below(grid_len)
        };
        if dense[i].abs() < 1e-6 {
            continue;
        }
        let h = 1e-6;
        let base = field.params()[i];
        field.params_mut()[i] = base + h;
        let fp = micro_loss(&field, &k, &pose, &rays, &settings).0;
        field.params_mut()[i] = base - h;
        let fm = micro_loss(&field, &k, &pose, &rays, &settings).0;
        field.params_mut()[i] = base;
        let fd = (fp - fm) / (2.0 * h);
        assert!(rel_err(dense[i], fd, 1e-6) < 1e-3, "param {i}: {} vs {fd}", dense[i]);
        checked += 1;
    }
    assert!(checked >= 50, "{checked}");
}

#[test]
fn closed_depth_gate_contributes_nothing() {
    let field = micro_field();
    let (k, pose) = micro_camera();
    let mut rays = micro_rays(&k, &pose, &field, &mut Rng::new(6));
    rays.retain(|r| r.sup.class == RayClass::Positive);
    let with = LossSettings {
        mode: NegativeTarget::Composited,
        use_depth: true,
        w_depth: 3.0,
        scale: 1.0,
    };
    let without = LossSettings { use_depth: false, ..with };
    // Densities near 1 leave these short rays far from opaque.
    let (la, pa, ga) = micro_loss(&field, &k, &pose, &rays, &with);
    let (lb, pb, gb) = micro_loss(&field, &k, &pose, &rays, &without);
    assert_eq!(la, lb);
    assert_eq!(pa, pb);
    assert_eq!(ga.mlp, gb.mlp);
    assert_eq!(ga.grid, gb.grid);
}

#[test]
fn open_depth_gate_adds_loss() {
    let mut field = micro_field();
    // All-positive weights and features drive raw density to its clamp.
    for p in field.params_mut() {
        *p = p.abs() + 0.3;
    }
    let (k, pose) = micro_camera();
    let mut rays = micro_rays(&k, &pose, &field, &mut Rng::new(6));
    rays.retain(|r| r.sup.class == RayClass::Positive);
    let mut work = RayWork::new(&field);
    let ray = pixel_ray(&k, &pose, rays[0].u, rays[0].v);
    let r = render_ray(&field, &mut work, &ray.origin, &ray.direction, &rays[0].ts, MarchOptions::default()).unwrap();
    assert!(r.t_final < OPAQUE_TRANSMITTANCE);
    let with = LossSettings {
        mode: NegativeTarget::Composited,
        use_depth: true,
        w_depth: 3.0,
        scale: 1.0,
    };
    let without = LossSettings { use_depth: false, ..with };
    let (la, _, _) = micro_loss(&field, &k, &pose, &rays, &with);
    let (lb, _, _) = micro_loss(&field, &k, &pose, &rays, &without);
    assert!(la > lb);
}

#[test]
fn empty_object_mask_still_trains_negatives() {
    let k = CameraIntrinsics::centered(8, 8, 8.0);
    let ds = SceneDataset {
        intrinsics: k,
        frames: vec![Frame {
            rgb: Raster::filled(8, 8, [0, 0, 0]),
            depth: Raster::filled(8, 8, 0.0),
            mask: Raster::filled(8, 8, 0),
            pose: Pose::look_at(Vector3::new(0.0, 0.0, 1.0), Vector3::zeros(), Vector3::y()),
        }],
        objects: vec![ObjectSpec {
            id: 1,
            name: "ghost".into(),
            aabb_min: [-0.1; 3],
            aabb_max: [0.1; 3],
        }],
    };
    let r = train(&ds, 1, &TrainConfig { n_steps: 3, ..tiny_config() }).unwrap();
    assert_eq!(r.counts.positive, 0);
    assert_eq!(r.trace.len(), 3);
}
