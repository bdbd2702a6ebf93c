//! Runs every cell of an experiment config and reports how far the object
//! center reprojects from its true position, averaged over training views,
//! before and after pose refinement.
//!
//! cargo run --release -p objnerf --example posediag -- sweep.json

use objnerf::experiment::{run_cell, ExperimentConfig};

fn main() {
    let path = std::env::args().nth(1).expect("usage: posediag <experiment.json>");
    let cfg = ExperimentConfig::load(path.as_ref()).unwrap();
    for cell in cfg.cells().unwrap() {
        let pristine = cell.training_dataset().unwrap();
        let noisy = cell.corrupt(&pristine).unwrap();
        let c = nalgebra::Vector3::from(pristine.objects[0].aabb().center());
        let px = |poses: &[objnerf::datamodel::Pose]| {
            poses
                .iter()
                .zip(pristine.poses())
                .map(|(p, q)| {
                    let a = pristine.intrinsics.project(&p.inverse().apply(&c)).unwrap();
                    let b = pristine.intrinsics.project(&q.inverse().apply(&c)).unwrap();
                    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
                })
                .sum::<f64>()
                / poses.len() as f64
        };
        let out = run_cell(&cell);
        let rep = out.report.unwrap();
        println!(
            "{} st {} sr {} extr {} | px {:.2} -> {:.2} | mae {:.2} cm iou {:.3} | {:.1}s",
            cell.object,
            cell.sigma_t_m,
            cell.sigma_r_deg,
            cell.optimize_extrinsics,
            px(&noisy.poses()),
            px(&rep.poses),
            out.row.depth_mae_m.unwrap() * 100.0,
            out.row.mask_iou.unwrap(),
            out.row.wall_s
        );
    }
}
