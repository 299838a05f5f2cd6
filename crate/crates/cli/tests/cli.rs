//! End-to-end tests of the `rayfield` binary: exit codes, artifacts,
//! determinism, and checkpoint/render consistency.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rayfield::field::{Aabb, VoxelField};
use rayfield::Vec3;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rayfield"))
}

fn tiny_config(out_dir: &Path) -> serde_json::Value {
    serde_json::json!({
        "scene": {
            "primitives": [
                { "kind": "sphere", "center": [0.0, 0.0, 0.0], "radius": 0.5,
                  "rgb": [0.9, 0.2, 0.1], "sigma": 60.0 }
            ],
            "camera_radius": 3.0,
            "fov_x_deg": 45.0,
            "near": 0.1,
            "far": 4.0,
            "gt_samples": 64,
            "seed": 5,
            "n_train": 3,
            "n_test": 1,
            "resolution": 16
        },
        "field": { "resolution": 8 },
        "train": {
            "epochs": 2,
            "batch_size": 256,
            "lr": 5e4,
            "lr_decay": 0.9,
            "sampler": {
                "random_ratio": 0.5, "n0": 10, "threshold": 1e-3,
                "init_depth": 1, "subdivide_every": 1,
                "all_pixel_last_epoch": true, "seed": 5
            },
            "sampling": { "n_samples": 16, "near": 0.1, "far": 4.0,
                          "jitter": true, "background": "white" },
            "metric": { "kind": "std-dev", "patch": 3 },
            "eval_every": 0,
            "seed": 5
        },
        "output_dir": out_dir,
        "workers": 2
    })
}

fn write_config(dir: &Path, value: &serde_json::Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn probmap_uniform_image_and_bad_metric() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    image::RgbImage::from_pixel(12, 9, image::Rgb([80, 80, 80]))
        .save(&input)
        .unwrap();
    let out = dir.path().join("map.png");

    let ok = run(bin().arg("probmap").arg(&input).arg("--out").arg(&out));
    assert!(ok.status.success(), "{}", stderr(&ok));
    let map = image::open(&out).unwrap().to_luma8();
    assert_eq!(map.dimensions(), (12, 9));
    // constant image degenerates to the uniform map: every weight 1.0
    assert!(map.pixels().all(|p| p.0[0] == 255));

    let also_ok = run(bin()
        .arg("probmap")
        .arg(&input)
        .args(["--metric", "entropy", "--patch", "5"])
        .arg("--out")
        .arg(dir.path().join("e.png")));
    assert!(also_ok.status.success());

    let bad = run(bin()
        .arg("probmap")
        .arg(&input)
        .args(["--metric", "foo"])
        .arg("--out")
        .arg(&out));
    assert_eq!(bad.status.code(), Some(2));

    let bad_patch = run(bin()
        .arg("probmap")
        .arg(&input)
        .args(["--patch", "4"])
        .arg("--out")
        .arg(&out));
    assert_eq!(bad_patch.status.code(), Some(2));

    let missing = run(bin()
        .arg("probmap")
        .arg(dir.path().join("absent.png"))
        .arg("--out")
        .arg(&out));
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn train_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("run_a");
    let out_b = dir.path().join("run_b");

    let config_a = write_config(dir.path(), &tiny_config(&out_a));
    let first = run(bin().arg("train").arg(&config_a));
    assert!(first.status.success(), "{}", stderr(&first));

    // artifacts: checkpoint, epoch CSV, per-round overlays and layouts
    assert!(out_a.join("field.ckpt").exists());
    let csv = fs::read_to_string(out_a.join("epochs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2, "header plus one row per epoch");
    assert!(csv.starts_with("epoch,rays_total"));
    let round = out_a.join("round_e000");
    assert!(round.join("leaves.csv").exists());
    assert!(round.join("sampled_rays.png").exists());
    assert!(round.join("render_error.png").exists());

    // same seed, fresh output directory: byte-identical CSV
    let config_b = dir.path().join("config_b.json");
    fs::write(
        &config_b,
        serde_json::to_string_pretty(&tiny_config(&out_b)).unwrap(),
    )
    .unwrap();
    let second = run(bin().arg("train").arg(&config_b));
    assert!(second.status.success(), "{}", stderr(&second));
    let csv_b = fs::read_to_string(out_b.join("epochs.csv")).unwrap();
    assert_eq!(csv, csv_b);
}

#[test]
fn config_validation_is_exhaustive_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();

    // missing required key: serde names it
    let missing = dir.path().join("missing.json");
    let mut doc = tiny_config(&dir.path().join("out"));
    doc.as_object_mut().unwrap().remove("field");
    fs::write(&missing, serde_json::to_string(&doc).unwrap()).unwrap();
    let output = run(bin().arg("train").arg(&missing));
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("field"), "{}", stderr(&output));

    // unknown key rejected
    let unknown = dir.path().join("unknown.json");
    let mut doc = tiny_config(&dir.path().join("out"));
    doc.as_object_mut().unwrap().insert("bogus".into(), serde_json::json!(1));
    fs::write(&unknown, serde_json::to_string(&doc).unwrap()).unwrap();
    let output = run(bin().arg("train").arg(&unknown));
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("bogus"), "{}", stderr(&output));

    // multiple range problems all listed before exit
    let invalid = dir.path().join("invalid.json");
    let mut doc = tiny_config(&dir.path().join("out"));
    doc["train"]["lr"] = serde_json::json!(-1.0);
    doc["train"]["epochs"] = serde_json::json!(0);
    doc["scene"]["resolution"] = serde_json::json!(4);
    fs::write(&invalid, serde_json::to_string(&doc).unwrap()).unwrap();
    let output = run(bin().arg("train").arg(&invalid));
    assert_eq!(output.status.code(), Some(2));
    let err = stderr(&output);
    assert!(err.contains("lr"), "{err}");
    assert!(err.contains("epochs"), "{err}");
    assert!(err.contains("resolution"), "{err}");
}

#[test]
fn bench_compares_the_two_arms() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let mut doc = tiny_config(&out);
    doc["train"]["epochs"] = serde_json::json!(4);
    let config = write_config(dir.path(), &doc);

    let output = run(bin().arg("bench").arg(&config));
    assert!(output.status.success(), "{}", stderr(&output));

    let comparison = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(comparison.starts_with("arm,epoch,rays,seconds,psnr"));
    assert_eq!(comparison.lines().count(), 1 + 2 * 4);

    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    let baseline_rays: u64 = row[0].parse().unwrap();
    let adaptive_rays: u64 = row[1].parse().unwrap();
    assert!(adaptive_rays <= baseline_rays);

    // epoch 0 predates any subdivision: both arms draw H*W per view
    let first_rays = |name: &str| -> u64 {
        let text = fs::read_to_string(out.join(name)).unwrap();
        text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap()
    };
    assert_eq!(first_rays("baseline_epochs.csv"), 3 * 16 * 16);
    assert_eq!(first_rays("adaptive_epochs.csv"), 3 * 16 * 16);
}

#[test]
fn render_matches_logged_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = write_config(dir.path(), &tiny_config(&out));
    let trained = run(bin().arg("train").arg(&config));
    assert!(trained.status.success(), "{}", stderr(&trained));

    let render_out = dir.path().join("renders");
    let rendered = run(bin()
        .arg("render")
        .arg("--checkpoint")
        .arg(out.join("field.ckpt"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&render_out));
    assert!(rendered.status.success(), "{}", stderr(&rendered));
    assert!(render_out.join("r_0.png").exists());

    // the mean PSNR printed by render equals the final logged PSNR
    let text = stdout(&rendered);
    let mean_line = text.lines().find(|l| l.starts_with("mean psnr")).unwrap();
    let rendered_psnr: f64 = mean_line
        .split_whitespace()
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    let csv = fs::read_to_string(out.join("epochs.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    let logged_psnr: f64 = last.split(',').nth(8).unwrap().parse().unwrap();
    assert!(
        (rendered_psnr - logged_psnr).abs() < 1e-6,
        "{rendered_psnr} vs {logged_psnr}"
    );
}

#[test]
fn render_rejects_corrupt_checkpoint_and_draws_vacuum_white() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), &tiny_config(&out));

    // vacuum checkpoint: essentially zero density renders pure white
    let vacuum_path = dir.path().join("vacuum.ckpt");
    let mut vacuum = VoxelField::new(
        4,
        Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)),
    );
    vacuum.raw_density_mut().iter_mut().for_each(|v| *v = -40.0);
    vacuum.save(&vacuum_path).unwrap();

    let render_out = dir.path().join("white");
    let output = run(bin()
        .arg("render")
        .arg("--checkpoint")
        .arg(&vacuum_path)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&render_out));
    assert!(output.status.success(), "{}", stderr(&output));
    let img = image::open(render_out.join("r_0.png")).unwrap().to_rgb8();
    assert!(img.pixels().all(|p| p.0 == [255, 255, 255]));

    // corrupt the magic bytes: clear error, exit 3
    let mut bytes = fs::read(&vacuum_path).unwrap();
    bytes[0] = b'X';
    let corrupt_path = dir.path().join("corrupt.ckpt");
    fs::write(&corrupt_path, &bytes).unwrap();
    let output = run(bin()
        .arg("render")
        .arg("--checkpoint")
        .arg(&corrupt_path)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&render_out));
    assert_eq!(output.status.code(), Some(3));
    assert!(stderr(&output).contains("checkpoint"));
}
