use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use depthfuse::formats::{read_pgm_depth, write_point_cloud};
use depthfuse_core::geometry::PointCloud;

fn depthfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depthfuse")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = depthfuse(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 10] = [
    "--preset",
    "tiny",
    "--set",
    "input_width=16",
    "--set",
    "input_height=16",
    "--set",
    "base_channels=2",
    "--set",
    "encoder_stages=2",
];

fn split(root: &Path, name: &str, count: &str, seed: &str, mix: &str) -> PathBuf {
    let dir = root.join(name);
    ok(&["gen-data", "--out", s(&dir), "--count", count, "--width", "16", "--height", "16", "--seed", seed, "--weather-mix", mix]);
    dir
}

fn train(train: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec!["train", "--train", s(train), "--out", s(out)];
    args.extend(SMALL);
    args.extend(extra);
    ok(&args)
}

#[test]
fn train_resume_predict_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = split(root, "train", "4", "3", "day:0.5,fog:0.5");
    let test = split(root, "test", "2", "4", "fog");

    let full = root.join("full");
    let log = train(&data, &full, &["--epochs", "2", "--val", s(&test)]);
    assert_eq!(log.lines().count(), 2);
    for f in ["train_log.jsonl", "epoch_001.ckpt", "epoch_002.ckpt", "last.ckpt", "config.txt"] {
        assert!(full.join(f).exists(), "{f} missing");
    }
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 1);
    assert!(first["val"]["rmse"].as_f64().unwrap() > 0.0);

    let part = root.join("part");
    train(&data, &part, &["--epochs", "1", "--val", s(&test)]);
    let last = part.join("last.ckpt");
    train(&data, &part, &["--epochs", "2", "--val", s(&test), "--resume", s(&last)]);
    for f in ["train_log.jsonl", "epoch_002.ckpt", "last.ckpt"] {
        assert_eq!(std::fs::read(part.join(f)).unwrap(), std::fs::read(full.join(f)).unwrap(), "{f} differs after resume");
    }

    let ckpt = full.join("last.ckpt");
    let (rgb, sparse) = (test.join("000000_rgb.ppm"), test.join("000000_sparse.pgm"));
    let (p1, p2, viz) = (root.join("p1.pgm"), root.join("p2.pgm"), root.join("p.ppm"));
    ok(&["predict", "--checkpoint", s(&ckpt), "--rgb", s(&rgb), "--sparse", s(&sparse), "--out", s(&p1), "--colormap", s(&viz)]);
    ok(&["predict", "--checkpoint", s(&ckpt), "--rgb", s(&rgb), "--sparse", s(&sparse), "--out", s(&p2)]);
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let depth = read_pgm_depth(&p1).unwrap();
    assert!(depth.data.iter().all(|&d| (0.5..=80.0).contains(&d)));
    assert!(viz.exists());
    let missing = depthfuse(&["predict", "--checkpoint", s(&ckpt), "--rgb", s(&rgb), "--out", s(&p2)]);
    assert_eq!(missing.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(missing.stderr.split(|&b| b == b'\n').next().unwrap()).unwrap();
    assert_eq!(err["error"], "validation");

    let rgb_only = root.join("rgb");
    train(&data, &rgb_only, &["--epochs", "1", "--fusion", "rgb"]);
    let out = depthfuse(&[
        "predict", "--checkpoint", s(&rgb_only.join("last.ckpt")), "--rgb", s(&rgb), "--sparse", s(&sparse), "--out", s(&p2),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"warning\""));

    let summary = |divisor: &str, csv: &Path| -> serde_json::Value {
        let out = ok(&["eval", "--checkpoint", s(&ckpt), "--split", s(&test), "--ard-divisor", divisor, "--csv", s(csv)]);
        serde_json::from_str(out.trim()).unwrap()
    };
    let (gt, pred) = (summary("gt", &root.join("gt.csv")), summary("pred", &root.join("pred.csv")));
    assert_eq!(gt["rmse"], pred["rmse"]);
    assert_eq!(gt["d1"], pred["d1"]);
    assert_ne!(gt["ard"], pred["ard"]);
    assert_ne!(gt["srd"], pred["srd"]);
    assert_eq!(gt["samples"], 2);
    let csv = std::fs::read_to_string(root.join("gt.csv")).unwrap();
    assert!(csv.starts_with("sample_id,rmse,ard,srd,d1,d2,d3"));
    assert_eq!(csv.lines().count(), 4);

    std::fs::remove_file(test.join("000001_gt.pgm")).unwrap();
    let out = depthfuse(&["eval", "--checkpoint", s(&ckpt), "--split", s(&test)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("000001"));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["skipped"][0], "000001");

    let empty = root.join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert_eq!(depthfuse(&["eval", "--checkpoint", s(&ckpt), "--split", s(&empty)]).status.code(), Some(1));
}

#[test]
fn validation_and_runtime_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = split(root, "d", "2", "0", "day");
    assert_eq!(depthfuse(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(depthfuse(&["gen-data", "--count", "3"]).status.code(), Some(1));
    assert_eq!(depthfuse(&["gen-data", "--out", s(&root.join("x")), "--weather-mix", "hail:1"]).status.code(), Some(1));
    let bad = depthfuse(&["train", "--train", s(&data), "--out", s(&root.join("o")), "--set", "no_such_key=1"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("no_such_key"));
    let zero = depthfuse(&["train", "--train", s(&data), "--out", s(&root.join("o")), "--epochs", "0"]);
    assert_eq!(zero.status.code(), Some(1));
    let size = depthfuse(&["train", "--train", s(&data), "--out", s(&root.join("o")), "--preset", "tiny", "--epochs", "1"]);
    assert_eq!(size.status.code(), Some(1), "16x16 samples with a 48-wide model");

    let file = root.join("file");
    std::fs::write(&file, "x").unwrap();
    let blocked = depthfuse(&["gen-data", "--out", s(&file.join("sub")), "--count", "1", "--width", "16", "--height", "16"]);
    assert_eq!(blocked.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(blocked.stderr.split(|&b| b == b'\n').next().unwrap()).unwrap();
    assert_eq!(err["error"], "runtime");
}

#[test]
fn project_and_densify() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let calib = root.join("calib.txt");
    std::fs::write(&calib, "fx=10\nfy=10\ncx=4\ncy=4\nwidth=8\nheight=8\n").unwrap();
    let cloud = root.join("cloud.csv");
    write_point_cloud(&cloud, &PointCloud::new(vec![[0.0, 0.0, 5.0], [0.0, 0.0, 3.0], [1.0, 1.0, 10.0], [0.0, 0.0, -1.0]])).unwrap();
    let sparse = root.join("sparse.pgm");
    let out = ok(&["project", "--cloud", s(&cloud), "--calib", s(&calib), "--out", s(&sparse)]);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["pixels"], 2);
    let raster = read_pgm_depth(&sparse).unwrap();
    assert_eq!(raster.get(4, 4), 3.0);
    assert_eq!(raster.get(5, 5), 10.0);

    let dense = root.join("dense.pgm");
    assert_eq!(depthfuse(&["densify", "--sparse", s(&sparse), "--guide", s(&root.join("nope.ppm")), "--out", s(&dense)]).status.code(), Some(1));
    let guide = root.join("g.ppm");
    let guide_img = depthfuse_core::image::RgbImage::new(8, 8);
    depthfuse::formats::write_ppm(&guide, &guide_img).unwrap();
    let out = ok(&["densify", "--sparse", s(&sparse), "--guide", s(&guide), "--out", s(&dense), "--solver", "cg"]);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["converged"], true);
    let d = read_pgm_depth(&dense).unwrap();
    assert!(d.data.iter().all(|&x| (3.0..=10.0).contains(&x)));
}

#[test]
fn gradcheck_and_bench_report() {
    let out = ok(&["gradcheck", "--seeds", "1"]);
    assert!(out.lines().count() > 10);
    assert!(out.lines().all(|l| l.starts_with("PASS ")));
    assert!(out.contains("max_rel_error="));
    let out = ok(&["bench", "--preset", "tiny", "--iterations", "1", "--warmup", "0", "--json"]);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert!(v["mean_seconds_per_frame"].as_f64().unwrap() > 0.0);
    assert_eq!(depthfuse(&["bench", "--iterations", "0"]).status.code(), Some(1));
}
