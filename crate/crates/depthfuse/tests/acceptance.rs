//! Acceptance suite. Prints one `ACCEPTANCE <n> PASS|FAIL` line per
//! criterion and fails if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use depthfuse::experiments::{fusion_vs_rgb_fog, overfit4, run_experiment, ExperimentReport};
use depthfuse::formats::{
    read_checkpoint, read_pgm_depth, read_point_cloud, read_ppm, write_checkpoint, write_pgm_depth, write_point_cloud,
    write_ppm, DEPTH_SCALE,
};
use depthfuse_core::densify::{build_weights, densify_gray, DensifyConfig, Solver};
use depthfuse_core::geometry::{backproject, project_points, CameraIntrinsics, PointCloud, RigidPose};
use depthfuse_core::gradcheck::{run_suite, DEFAULT_SEEDS};
use depthfuse_core::image::{DepthMap, GrayImage, RgbImage};
use depthfuse_core::losses::{berhu, loss_total, LossConfig, PixelLossKind};
use depthfuse_core::metrics::{compute_metrics, DivisorConvention, EvalMask, MetricsReport, DELTA_THRESHOLDS};
use depthfuse_core::model::{FusionMode, Model, ModelConfig};
use depthfuse_core::optim::LrSchedule;
use depthfuse_core::train::TrainState;
use depthfuse_core::{Shape, Tensor};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gradients() -> String {
    let t = Instant::now();
    let report = run_suite(DEFAULT_SEEDS);
    let elapsed = t.elapsed().as_secs_f64();
    print!("{report}");
    assert!(report.passed(), "gradient check failures:\n{report}");
    let worst = report
        .cases
        .iter()
        .map(|c| c.max_rel_error / c.tolerance)
        .fold(0.0, f64::max);
    format!("{} cases x {DEFAULT_SEEDS} seeds, worst error/tolerance {worst:.3}, {elapsed:.1}s (budget 120s)", report.cases.len())
}

/// Plain per-pixel loop, independent of the library's accumulation.
fn reference_metrics(pred: &DepthMap, gt: &DepthMap, divisor: DivisorConvention) -> [f64; 6] {
    let (mut sq, mut ard, mut srd, mut n) = (0.0, 0.0, 0.0, 0.0);
    let mut hits = [0.0; 3];
    for i in 0..gt.data.len() {
        let (d, g) = (pred.data[i], gt.data[i]);
        if g <= 0.0 {
            continue;
        }
        let den = if divisor == DivisorConvention::Groundtruth { g } else { d };
        sq += (d - g) * (d - g);
        ard += (d - g).abs() / den;
        srd += (d - g) * (d - g) / den;
        for k in 0..3 {
            if (d / g).max(g / d) < DELTA_THRESHOLDS[k] {
                hits[k] += 1.0;
            }
        }
        n += 1.0;
    }
    [(sq / n).sqrt(), ard / n, srd / n, hits[0] / n, hits[1] / n, hits[2] / n]
}

fn report_fields(m: &MetricsReport) -> [f64; 6] {
    [m.rmse, m.ard, m.srd, m.delta1, m.delta2, m.delta3]
}

fn metric_oracle() -> String {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (w, h) = (r.random_range(1..24), r.random_range(1..24));
        let mut gt = DepthMap::new(w, h);
        let mut pred = DepthMap::new(w, h);
        for i in 0..w * h {
            gt.data[i] = if r.random::<f64>() < 0.2 { 0.0 } else { r.random_range(0.5..80.0) };
            pred.data[i] = r.random_range(0.5..80.0);
        }
        gt.data[0] = r.random_range(0.5..80.0);
        for divisor in [DivisorConvention::Groundtruth, DivisorConvention::Prediction] {
            let got = report_fields(&compute_metrics(&pred, &gt, &EvalMask::from_groundtruth(&gt), divisor).unwrap());
            let want = reference_metrics(&pred, &gt, divisor);
            for (a, b) in got.iter().zip(&want) {
                let err = (a - b).abs() / b.abs().max(1.0);
                assert!(err <= 1e-12, "metric mismatch {a} vs {b}");
                worst = worst.max(err);
            }
        }
    }
    let gt = DepthMap::from_vec(2, 1, vec![2.0, 4.0]).unwrap();
    let pred = DepthMap::from_vec(2, 1, vec![1.0, 5.0]).unwrap();
    let mask = EvalMask::all(2, 1);
    let g = compute_metrics(&pred, &gt, &mask, DivisorConvention::Groundtruth).unwrap();
    let p = compute_metrics(&pred, &gt, &mask, DivisorConvention::Prediction).unwrap();
    assert_eq!(g.rmse, 1.0);
    assert_eq!(g.ard, 0.375);
    assert_eq!(p.ard, 0.6);
    assert_eq!(g.delta1, 0.0);
    format!("100 pairs x 2 divisors, worst relative deviation {worst:.1e}; hand example exact")
}

fn random_map(r: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Tensor<f64> {
    let shape = Shape::nchw(n, 1, h, w);
    let data = (0..shape.numel()).map(|_| r.random_range(0.01..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn berhu_at(x: f64, c: f64) -> f64 {
    berhu(&Tensor::from_vec(Shape::new(&[1]).unwrap(), vec![x]).unwrap(), c).unwrap().data()[0]
}

fn loss_identities() -> String {
    let mut r = rng(3);
    let kinds = [PixelLossKind::L1, PixelLossKind::L2, PixelLossKind::Berhu];
    for i in 0..60 {
        let cfg = LossConfig { kind: kinds[i % 3], ..LossConfig::default() };
        let gt = random_map(&mut r, 1 + i % 2, 8, 12);
        assert_eq!(loss_total(&gt, &gt, &cfg).unwrap(), 0.0);
        let mut pred = gt.clone();
        let k = r.random_range(0..pred.len());
        let step = r.random_range(1e-4..0.05);
        pred.data_mut()[k] += if gt.data()[k] < 0.9 { step } else { -step };
        assert!(loss_total(&pred, &gt, &cfg).unwrap() > 0.0, "perturbed pair has zero loss");
        let other = random_map(&mut r, 1 + i % 2, 8, 12);
        assert!(loss_total(&other, &gt, &cfg).unwrap() > 0.0);
    }
    let delta = 1e-9;
    let mut worst: f64 = 0.0;
    for c in [1.0, 0.37, 2.5] {
        let (lo, at, hi) = (berhu_at(c - delta, c), berhu_at(c, c), berhu_at(c + delta, c));
        assert!((hi - lo).abs() <= 2.0 * delta * (1.0 + 1e-6), "jump at c={c}");
        let (left, right) = ((at - lo) / delta, (hi - at) / delta);
        assert!((left - 1.0).abs() < 1e-6 && (right - 1.0).abs() < 1e-6, "slopes {left} {right} at c={c}");
        worst = worst.max((left - right).abs());
        assert_eq!(berhu_at(-c - delta, c), berhu_at(c + delta, c));
    }
    assert_eq!(berhu_at(0.5, 1.0), 0.5);
    assert_eq!(berhu_at(2.0, 1.0), 2.5);
    assert_eq!(berhu_at(-2.0, 1.0), 2.5);
    format!("zero iff equal on 60 pairs; berhu one-sided slopes agree within {worst:.1e} at 1e-9; 0.5->0.5, 2->2.5")
}

fn random_guide(r: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
    let data = (0..w * h).map(|_| if r.random::<f64>() < 0.5 { r.random::<f64>() } else { 0.5 }).collect();
    GrayImage { width: w, height: h, data }
}

fn random_sparse(r: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> DepthMap {
    let mut s = DepthMap::new(w, h);
    for v in s.data.iter_mut() {
        if r.random::<f64>() < density {
            *v = r.random_range(1.0..80.0);
        }
    }
    let i = r.random_range(0..w * h);
    s.data[i] = r.random_range(1.0..80.0);
    s
}

/// Solves the same system with a dense LU factorization.
fn dense_solution(sparse: &DepthMap, guide: &GrayImage, cfg: &DensifyConfig) -> Vec<f64> {
    let weights = build_weights(guide, cfg);
    let unknowns: Vec<usize> = (0..sparse.data.len()).filter(|&p| sparse.data[p] == 0.0).collect();
    let mut slot = vec![usize::MAX; sparse.data.len()];
    for (i, &p) in unknowns.iter().enumerate() {
        slot[p] = i;
    }
    let m = unknowns.len();
    let mut a = DMatrix::<f64>::identity(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (i, &p) in unknowns.iter().enumerate() {
        for &(q, wq) in weights.of(p) {
            let q = q as usize;
            if slot[q] == usize::MAX {
                b[i] += wq * sparse.data[q];
            } else {
                a[(i, slot[q])] -= wq;
            }
        }
    }
    let x = a.lu().solve(&b).expect("system is nonsingular");
    let mut out = sparse.data.clone();
    for (i, &p) in unknowns.iter().enumerate() {
        out[p] = x[i];
    }
    out
}

fn densify_properties() -> String {
    let mut r = rng(4);
    for _ in 0..50 {
        let (w, h) = (r.random_range(2..20), r.random_range(2..16));
        let sparse = random_sparse(&mut r, w, h, 0.1);
        let guide = random_guide(&mut r, w, h);
        let out = densify_gray(&sparse, &guide, &DensifyConfig::default()).unwrap();
        let known: Vec<f64> = sparse.data.iter().copied().filter(|&d| d != 0.0).collect();
        let lo = known.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = known.iter().copied().fold(0.0, f64::max);
        for (o, s) in out.depth.data.iter().zip(&sparse.data) {
            if *s != 0.0 {
                assert_eq!(o, s, "known pixel changed");
            }
            assert!(*o >= lo * (1.0 - 1e-12) && *o <= hi * (1.0 + 1e-12), "{o} outside [{lo}, {hi}]");
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..40 {
        let (w, h) = (r.random_range(2..=8), r.random_range(2..=8));
        let sparse = random_sparse(&mut r, w, h, 0.15);
        let guide = random_guide(&mut r, w, h);
        let solver = if i % 2 == 0 { Solver::GaussSeidel } else { Solver::ConjugateGradient };
        let cfg = DensifyConfig { tolerance: 1e-12, max_iterations: 200_000, solver, ..DensifyConfig::default() };
        let out = densify_gray(&sparse, &guide, &cfg).unwrap();
        let want = dense_solution(&sparse, &guide, &cfg);
        for (a, b) in out.depth.data.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-5, "iterative {a} vs direct {b}");
            worst = worst.max((a - b).abs());
        }
    }
    for _ in 0..20 {
        let (w, h) = (r.random_range(1..16), r.random_range(1..16));
        let mut sparse = DepthMap::new(w, h);
        let v = r.random_range(0.5..80.0);
        sparse.data[r.random_range(0..w * h)] = v;
        let guide = GrayImage { width: w, height: h, data: vec![r.random::<f64>(); w * h] };
        let out = densify_gray(&sparse, &guide, &DensifyConfig::default()).unwrap();
        assert!(out.depth.data.iter().all(|&d| d == v));
    }
    format!("fidelity and bounds on 50 instances; max deviation from dense LU {worst:.1e}; constant guide exact")
}

fn geometry_round_trip() -> String {
    let mut r = rng(5);
    let mut points = 0;
    for _ in 0..50 {
        let (w, h) = (r.random_range(4..64), r.random_range(4..48));
        let f = r.random_range(0.5..2.0) * w as f64;
        let k = CameraIntrinsics::new(f, f * r.random_range(0.9..1.1), w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
        let sparse = random_sparse(&mut r, w, h, 0.3);
        let cloud = backproject(&sparse, &k);
        points += cloud.len();
        assert_eq!(project_points(&cloud, &RigidPose::identity(), &k), sparse);
    }
    let k = CameraIntrinsics::new(20.0, 20.0, 8.0, 6.0, 16, 12).unwrap();
    for _ in 0..20 {
        let (u, v) = (r.random_range(0..16) as f64, r.random_range(0..12) as f64);
        let mut depths: Vec<f64> = (0..5).map(|_| r.random_range(1.0..50.0)).collect();
        let cloud = PointCloud::new(depths.iter().map(|&z| k.unproject(u, v, z)).collect());
        let out = project_points(&cloud, &RigidPose::identity(), &k);
        depths.sort_by(f64::total_cmp);
        assert_eq!(out.get(u as usize, v as usize), depths[0]);
        assert_eq!(out.nonzero_count(), 1);
    }
    format!("50 rasters ({points} points) exact; z-buffer keeps the nearest of 5 on 20 collisions")
}

fn schedule() -> String {
    let s = LrSchedule::default();
    assert_eq!(s.lr(1), 1e-4);
    assert_eq!(s.lr(8), 2e-5);
    assert_eq!(s.lr(15), 4e-6);
    for e in 1..40 {
        assert!(s.lr(e + 1) <= s.lr(e));
    }
    format!("lr(1)={:e} lr(8)={:e} lr(15)={:e}", s.lr(1), s.lr(8), s.lr(15))
}

fn random_state(r: &mut ChaCha8Rng) -> TrainState {
    let modes = [FusionMode::RgbOnly, FusionMode::ConcatTruncate, FusionMode::ElementwiseAdd];
    let cfg = ModelConfig {
        input_width: 16,
        input_height: 16,
        base_channels: r.random_range(1..4),
        encoder_stages: r.random_range(1..3),
        fusion_mode: modes[r.random_range(0..3)],
        seed: r.random(),
        ..ModelConfig::tiny()
    };
    let mut state = TrainState::new(Model::build(cfg).unwrap(), Default::default());
    for p in state.model.params_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = r.random_range(-3.0..3.0));
    }
    for t in state.adam.m.iter_mut().chain(state.adam.v.iter_mut()) {
        t.data_mut().iter_mut().for_each(|v| *v = r.random::<f32>() * 1e-3);
    }
    state.adam.step = r.random_range(0..10_000);
    state.epoch = r.random_range(0..50);
    state
}

fn format_round_trips(dir: &Path) -> String {
    let mut r = rng(10);
    for i in 0..100 {
        let (w, h) = (r.random_range(1..40), r.random_range(1..30));
        let rgb: Vec<f32> = (0..w * h * 3).map(|_| r.random_range(0..=255u32) as f32 / 255.0).collect();
        let img = RgbImage::from_vec(w, h, rgb).unwrap();
        let p = dir.join(format!("{i}.ppm"));
        write_ppm(&p, &img).unwrap();
        assert_eq!(read_ppm(&p).unwrap(), img);

        let depth: Vec<f64> = (0..w * h).map(|_| f64::from(r.random_range(0..=u16::MAX)) / DEPTH_SCALE).collect();
        let d = DepthMap::from_vec(w, h, depth).unwrap();
        let p = dir.join(format!("{i}.pgm"));
        write_pgm_depth(&p, &d).unwrap();
        assert_eq!(read_pgm_depth(&p).unwrap(), d);

        let n = r.random_range(0..50);
        let pts = (0..n)
            .map(|_| {
                let e = r.random_range(-6..6);
                [0, 1, 2].map(|_| r.random_range(-1.0..1.0) * 10f64.powi(e))
            })
            .collect();
        let mut cloud = PointCloud::new(pts);
        if i % 2 == 0 {
            cloud.intensity = Some((0..n).map(|_| r.random()).collect());
        }
        let p = dir.join(format!("{i}.csv"));
        write_point_cloud(&p, &cloud).unwrap();
        assert_eq!(read_point_cloud(&p).unwrap(), cloud);

        let state = random_state(&mut r);
        let p = dir.join(format!("{i}.ckpt"));
        write_checkpoint(&p, &state).unwrap();
        let back = read_checkpoint(&p).unwrap();
        assert_eq!(back, state);
        let q = dir.join(format!("{i}b.ckpt"));
        write_checkpoint(&q, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }
    "PPM, PGM, point-cloud CSV and checkpoint on 100 random instances each".to_string()
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "report.json" && n != "report.txt") {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

struct Runs {
    overfit: Option<(ExperimentReport, PathBuf)>,
    fusion: Option<(ExperimentReport, PathBuf)>,
}

fn experiment(spec: depthfuse::experiments::ExperimentSpec, dir: &Path) -> ExperimentReport {
    let report = run_experiment(&spec, dir, |msg| eprintln!("{msg}")).unwrap();
    print!("{report}");
    report
}

fn overfit(runs: &mut Runs, work: &Path) -> String {
    let dir = work.join("overfit4-a");
    let report = experiment(overfit4(), &dir);
    let m = &report.outcome.metrics;
    let detail = format!(
        "loss ratio {:.4} (<= 0.1), delta1 {:.4} (>= 0.95), {:.0}s",
        m["loss_ratio"],
        m["delta1"],
        report.timings.iter().map(|t| t.seconds).sum::<f64>()
    );
    let passed = report.passed();
    runs.overfit = Some((report, dir));
    assert!(passed, "{detail}");
    detail
}

fn fusion(runs: &mut Runs, work: &Path) -> String {
    let dir = work.join("fusion-a");
    let report = experiment(fusion_vs_rgb_fog(), &dir);
    let m = &report.outcome.metrics;
    let detail = format!(
        "rmse concat {:.4} vs rgb {:.4}, margin {:.2}% (>= 0 required, >= 3% expected), {:.0}s",
        m["rmse.concat"],
        m["rmse.rgb"],
        100.0 * m["rmse_margin"],
        report.timings.iter().map(|t| t.seconds).sum::<f64>()
    );
    let passed = report.passed();
    runs.fusion = Some((report, dir));
    assert!(passed, "{detail}");
    detail
}

fn reproducibility(runs: &Runs, work: &Path) -> String {
    let mut compared = 0;
    let pairs = [
        (runs.overfit.as_ref(), overfit4(), "overfit4-b"),
        (runs.fusion.as_ref(), fusion_vs_rgb_fog(), "fusion-b"),
    ];
    for (first, spec, name) in pairs {
        let (report, dir) = first.expect("first run completed");
        let again = experiment(spec, &work.join(name));
        assert_eq!(again.outcome, report.outcome, "{name}: reports differ");
        let (a, b) = (files_under(dir), files_under(&work.join(name)));
        assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>(), "{name}: file sets differ");
        for (k, v) in &a {
            assert!(v == &b[k], "{name}: {} differs", k.display());
        }
        assert!(a.keys().any(|k| k.ends_with("train_log.jsonl")) && a.keys().any(|k| k.extension().is_some_and(|e| e == "ckpt")));
        compared += a.len();
    }
    format!("{compared} files (logs, checkpoints, data, evaluations) bitwise identical across reruns")
}

fn check(no: u32, title: &str, f: impl FnOnce() -> String) -> bool {
    let t = Instant::now();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(detail) => {
            println!("ACCEPTANCE {no:>2} PASS {title}: {detail} [{:.1}s]", t.elapsed().as_secs_f64());
            true
        }
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            println!("ACCEPTANCE {no:>2} FAIL {title}: {msg} [{:.1}s]", t.elapsed().as_secs_f64());
            false
        }
    }
}

#[test]
fn acceptance_criteria() {
    let work = tempfile::tempdir().unwrap();
    let formats_dir = work.path().join("formats");
    std::fs::create_dir_all(&formats_dir).unwrap();
    let mut runs = Runs { overfit: None, fusion: None };
    let mut results = Vec::new();
    results.push(check(1, "gradient suite", gradients));
    results.push(check(2, "metric oracle", metric_oracle));
    results.push(check(3, "loss identities", loss_identities));
    results.push(check(4, "densify", densify_properties));
    results.push(check(5, "geometry round trip", geometry_round_trip));
    results.push(check(6, "overfit4", || overfit(&mut runs, work.path())));
    results.push(check(7, "fusion-vs-rgb-fog", || fusion(&mut runs, work.path())));
    results.push(check(8, "schedule", schedule));
    results.push(check(9, "reproducibility", || reproducibility(&runs, work.path())));
    results.push(check(10, "format round trips", || format_round_trips(&formats_dir)));
    let passed = results.iter().filter(|&&p| p).count();
    println!("ACCEPTANCE {passed}/{} criteria passed", results.len());
    assert_eq!(passed, results.len());
}
