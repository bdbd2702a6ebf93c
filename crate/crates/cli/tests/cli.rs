use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use objnerf::corruption::mask_iou;
use objnerf::datamodel::load_dataset;
use objnerf::experiment::read_results_csv;

fn objnerf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_objnerf"))
        .args(args)
        .env("OBJNERF_THREADS", "2")
        .output()
        .expect("spawn objnerf")
}

fn ok(args: &[&str]) -> Output {
    let out = objnerf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn scene_file() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes/four_objects.json")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, views: &str) {
    ok(&["synth", "--scene", s(&scene_file()), "--views", views, "--radius", "0.6", "--out", s(dir)]);
}

#[test]
fn synth_writes_loadable_dataset_and_run_record() {
    let tmp = tempfile::tempdir().unwrap();
    let ds_dir = tmp.path().join("ds");
    synth(&ds_dir, "3");
    let ds = load_dataset(&ds_dir).unwrap();
    assert_eq!(ds.frames.len(), 3);
    assert_eq!(ds.objects.len(), 4);
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(ds_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "synth");
    assert_eq!(run["seed"], 0);
    assert_eq!(run["resolved"]["scene_config"]["trajectory"]["n_views"], 3);
}

#[test]
fn corrupt_hits_requested_mask_iou() {
    let tmp = tempfile::tempdir().unwrap();
    let ds_dir = tmp.path().join("ds");
    let noisy_dir = tmp.path().join("noisy");
    synth(&ds_dir, "2");
    ok(&["corrupt", "--in", s(&ds_dir), "--object", "book", "--mask-iou", "0.85", "--seed", "3", "--out", s(&noisy_dir)]);
    let a = load_dataset(&ds_dir).unwrap();
    let b = load_dataset(&noisy_dir).unwrap();
    let id = a.object_by_name("book").unwrap().id;
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        if fa.mask.data().iter().all(|&m| m != id) {
            continue;
        }
        let iou = mask_iou(&fa.mask, &fb.mask, id).unwrap();
        assert!((iou - 0.85).abs() <= 0.01, "iou {iou}");
    }
}

#[test]
fn train_eval_render_classify_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let ds_dir = tmp.path().join("ds");
    let run_dir = tmp.path().join("run");
    let eval_dir = tmp.path().join("eval");
    let render_dir = tmp.path().join("render");
    let class_dir = tmp.path().join("class");
    synth(&ds_dir, "2");
    ok(&["classify", "--in", s(&ds_dir), "--object", "cup", "--out", s(&class_dir)]);
    assert!(class_dir.join("class_0001.png").is_file());
    assert!(class_dir.join("counts.json").is_file());

    ok(&[
        "train", "--in", s(&ds_dir), "--object", "cup", "--steps", "4", "--rays", "64", "--samples", "16", "--depth",
        "--out", s(&run_dir),
    ]);
    for f in ["field.ofp", "poses.json", "trace.csv", "run.json"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let trace = fs::read_to_string(run_dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 5);

    let ckpt = run_dir.join("field.ofp");
    ok(&[
        "eval", "--checkpoint", s(&ckpt), "--in", s(&ds_dir), "--object", "cup", "--samples", "16",
        "--poses", s(&run_dir.join("poses.json")), "--out", s(&eval_dir),
    ]);
    let mut rdr = csv::Reader::from_path(eval_dir.join("metrics.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    let iou: f64 = rows[0][3].parse().unwrap();
    assert!(iou.is_finite() && (0.0..=1.0).contains(&iou));

    ok(&["render", "--checkpoint", s(&ckpt), "--in", s(&ds_dir), "--frame", "1", "--samples", "16", "--out", s(&render_dir)]);
    for f in ["depth.png", "mask.png", "rgb.png", "run.json"] {
        assert!(render_dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn errors_are_one_line_and_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = objnerf(&["train", "--in", s(&tmp.path().join("missing")), "--object", "cup", "--out", s(tmp.path())]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));

    let ds_dir = tmp.path().join("ds");
    synth(&ds_dir, "1");
    let out = objnerf(&["classify", "--in", s(&ds_dir), "--object", "teapot", "--out", s(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("teapot"));
}

fn tiny_experiment(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "name": "tiny",
        "objects": ["ball"],
        "repeats": 1,
        "test_views": 2,
        "sweep": { "n_images": [3] },
        "train": { "n_steps": 3, "rays_per_batch": 64, "n_samples_per_ray": 16 },
        "eval": { "n_samples": 16 }
    });
    let path = dir.join("exp.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn experiment_single_cell_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_experiment(tmp.path());
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    ok(&["experiment", "--config", s(&cfg), "--seed", "5", "--out", s(&a)]);
    ok(&["experiment", "--config", s(&cfg), "--seed", "5", "--out", s(&b)]);
    let strip = |p: &Path| {
        let mut rows = read_results_csv(&p.join("results.csv")).unwrap();
        for r in &mut rows {
            r.wall_s = 0.0;
        }
        rows
    };
    let rows = strip(&a);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].status, "ok");
    assert_eq!(rows[0].seed, 5);
    assert!(rows[0].mask_iou.unwrap().is_finite());
    assert_eq!(rows, strip(&b));
    assert!(a.join("summary.csv").is_file());

    ok(&["experiment", "--replay", s(&a.join("cells/0000/run.json")), "--out", s(&c)]);
    assert_eq!(strip(&c), rows);
}
