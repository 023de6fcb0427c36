//! Finite-difference verification of every differentiable operation.
//!
//! Each [`GradCase`] builds a computation on a 64-bit tape from freshly drawn
//! inputs. Non-scalar outputs are reduced with a fixed random projection, and
//! the analytic input gradients are compared against central differences.
//!
//! The error of one coordinate is `|a − n| / max(|a|, |n|, s)`, where `s` is
//! `1e-3` times the largest numeric gradient magnitude of that input, so
//! coordinates with negligible gradients are judged on an absolute scale.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{
    tape_loss_edge, tape_loss_pixel, tape_loss_ssim, tape_loss_total, LossConfig, PixelLossKind, SsimParams,
};
use crate::model::{BoundParams, FusionMode, Model, ModelConfig};
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_SEEDS: u64 = 10;

pub trait GradCase {
    fn name(&self) -> String;
    /// Inputs for one trial. Cases with kinks draw inputs away from them.
    fn inputs(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>>;
    fn forward(&self, tape: &mut Tape<f64>, inputs: &[Var]) -> Result<Var>;
    fn tolerance(&self) -> f64 {
        OP_TOLERANCE
    }
    /// Coordinates checked per input tensor; `None` checks all of them.
    fn coordinates_per_input(&self) -> Option<usize> {
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    pub name: String,
    pub seeds: u64,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub error: Option<String>,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.max_rel_error <= self.tolerance
    }
}

fn evaluate(case: &dyn GradCase, inputs: &[Tensor<f64>], projection_seed: u64, grads: bool) -> Result<(f64, Vec<Tensor<f64>>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), grads)).collect();
    let mut out = case.forward(&mut tape, &vars)?;
    if !tape.shape(out).is_scalar() {
        let shape = tape.shape(out);
        let mut rng = ChaCha8Rng::seed_from_u64(projection_seed);
        let r: Vec<f64> = (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
        out = tape.dot_const(out, Tensor::from_vec(shape, r)?)?;
    }
    let value = tape.value(out).item();
    if !grads {
        return Ok((value, Vec::new()));
    }
    let mut g = tape.backward(out)?;
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((value, grads))
}

fn check_seed(case: &dyn GradCase, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = case.inputs(&mut rng);
    let projection_seed = rng.random();
    let (_, analytic) = evaluate(case, &inputs, projection_seed, true)?;
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let mut coords: Vec<usize> = (0..input.len()).collect();
        if let Some(n) = case.coordinates_per_input() {
            coords.shuffle(&mut rng);
            coords.truncate(n);
        }
        let mut numeric = Vec::with_capacity(coords.len());
        let mut probe = inputs.to_vec();
        for &i in &coords {
            let x = input.data()[i];
            probe[k].data_mut()[i] = x + FD_STEP;
            let (fp, _) = evaluate(case, &probe, projection_seed, false)?;
            probe[k].data_mut()[i] = x - FD_STEP;
            let (fm, _) = evaluate(case, &probe, projection_seed, false)?;
            probe[k].data_mut()[i] = x;
            numeric.push((fp - fm) / (2.0 * FD_STEP));
        }
        let scale = 1e-3 * numeric.iter().fold(0.0f64, |m, n| m.max(n.abs()));
        for (&i, &n) in coords.iter().zip(&numeric) {
            let a = analytic[k].data()[i];
            let denom = a.abs().max(n.abs()).max(scale).max(1e-12);
            worst = worst.max((a - n).abs() / denom);
        }
    }
    Ok(worst)
}

pub fn check_case(case: &dyn GradCase, seeds: u64) -> CaseReport {
    let mut report = CaseReport { name: case.name(), seeds, max_rel_error: 0.0, tolerance: case.tolerance(), error: None };
    for seed in 0..seeds {
        match check_seed(case, seed) {
            Ok(e) => report.max_rel_error = report.max_rel_error.max(e),
            Err(e) => {
                report.error = Some(format!("seed {seed}: {e}"));
                break;
            }
        }
    }
    report
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub cases: Vec<CaseReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(CaseReport::passed)
    }
}

impl core::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        for c in &self.cases {
            let status = if c.passed() { "PASS" } else { "FAIL" };
            write!(f, "{status} {:<28} max_rel_error={:.3e} tol={:.0e} seeds={}", c.name, c.max_rel_error, c.tolerance, c.seeds)?;
            if let Some(e) = &c.error {
                write!(f, " error={e}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub fn run_cases(cases: &[Box<dyn GradCase>], seeds: u64) -> GradcheckReport {
    GradcheckReport { cases: cases.iter().map(|c| check_case(c.as_ref(), seeds)).collect() }
}

/// The full operation and loss suite plus the end-to-end model check.
pub fn run_suite(seeds: u64) -> GradcheckReport {
    let mut cases = standard_cases();
    cases.push(Box::new(ModelCase::tiny()));
    run_cases(&cases, seeds)
}

fn uniform(rng: &mut impl Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let shape = Shape::new(dims).expect("valid test shape");
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect()).expect("sized")
}

/// Distinct values, at least `gap` apart, with random signs when `signed`,
/// so no pair of entries (or entry and zero) is within a step of a tie.
fn spaced(rng: &mut impl Rng, dims: &[usize], gap: f64, signed: bool) -> Tensor<f64> {
    let shape = Shape::new(dims).expect("valid test shape");
    let mut mags: Vec<f64> = (0..shape.numel()).map(|k| (k + 1) as f64 * gap).collect();
    mags.shuffle(rng);
    let data = mags
        .into_iter()
        .map(|m| if signed && rng.random_bool(0.5) { -m } else { m })
        .collect();
    Tensor::from_vec(shape, data).expect("sized")
}

const X: [usize; 4] = [2, 2, 4, 4];
const PLANE: [usize; 4] = [2, 1, 4, 4];

type Build = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;
type Draw = fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>;

struct FnCase {
    name: &'static str,
    draw: Draw,
    build: Build,
}

impl GradCase for FnCase {
    fn name(&self) -> String {
        self.name.into()
    }
    fn inputs(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
        (self.draw)(rng)
    }
    fn forward(&self, tape: &mut Tape<f64>, inputs: &[Var]) -> Result<Var> {
        (self.build)(tape, inputs)
    }
}

/// `gt` plus an offset whose entries and forward differences stay clear of 0.
fn pred_gt_pair(rng: &mut ChaCha8Rng, dims: &[usize]) -> Vec<Tensor<f64>> {
    let gt = uniform(rng, dims, 0.3, 0.7);
    let off = spaced(rng, dims, 0.2 / gt.len() as f64, true);
    let pred = Tensor::from_vec(gt.shape(), gt.data().iter().zip(off.data()).map(|(g, o)| g + o).collect()).expect("sized");
    alloc::vec![pred, gt]
}

/// Pair whose edge-loss differences are bounded away from zero: the offset
/// is a random ±1 pattern scaled by a spaced field along both axes.
fn edge_pair(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let gt = uniform(rng, &PLANE, 0.3, 0.7);
    let (h, w) = (PLANE[2], PLANE[3]);
    let mut pred = gt.clone();
    for n in 0..PLANE[0] {
        let a: f64 = rng.random_range(0.02..0.05);
        let b: f64 = rng.random_range(0.06..0.09);
        for y in 0..h {
            for x in 0..w {
                // Strictly monotone along both axes with distinct slopes.
                pred.data_mut()[(n * h + y) * w + x] += a * x as f64 + b * y as f64;
            }
        }
    }
    alloc::vec![pred, gt]
}

pub fn standard_cases() -> Vec<Box<dyn GradCase>> {
    let cases: Vec<FnCase> = alloc::vec![
        FnCase {
            name: "conv2d stride1 pad1",
            draw: |r| alloc::vec![uniform(r, &X, -1.0, 1.0), uniform(r, &[3, 2, 3, 3], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)],
            build: |t, v| t.conv2d(v[0], v[1], v[2], 1, 1),
        },
        FnCase {
            name: "conv2d stride2 pad0",
            draw: |r| alloc::vec![uniform(r, &X, -1.0, 1.0), uniform(r, &[3, 2, 2, 2], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)],
            build: |t, v| t.conv2d(v[0], v[1], v[2], 2, 0),
        },
        FnCase {
            name: "conv1x1",
            draw: |r| alloc::vec![uniform(r, &X, -1.0, 1.0), uniform(r, &[3, 2, 1, 1], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)],
            build: |t, v| t.conv1x1(v[0], v[1], v[2]),
        },
        FnCase { name: "leaky_relu", draw: |r| alloc::vec![spaced(r, &X, 0.02, true)], build: |t, v| t.leaky_relu(v[0], 0.2) },
        FnCase { name: "sigmoid", draw: |r| alloc::vec![uniform(r, &X, -3.0, 3.0)], build: |t, v| Ok(t.sigmoid(v[0])) },
        FnCase { name: "maxpool2x", draw: |r| alloc::vec![spaced(r, &X, 0.02, true)], build: |t, v| t.maxpool2x(v[0]) },
        FnCase { name: "upsample2x", draw: |r| alloc::vec![uniform(r, &X, -1.0, 1.0)], build: |t, v| t.upsample2x(v[0]) },
        FnCase {
            name: "concat_channels",
            draw: |r| alloc::vec![uniform(r, &X, -1.0, 1.0), uniform(r, &PLANE, -1.0, 1.0)],
            build: |t, v| t.concat_channels(v[0], v[1]),
        },
        FnCase {
            name: "add",
            draw: |r| alloc::vec![uniform(r, &X, -1.0, 1.0), uniform(r, &X, -1.0, 1.0)],
            build: |t, v| t.add(v[0], v[1]),
        },
        FnCase {
            name: "add broadcast",
            draw: |r| alloc::vec![uniform(r, &X, -1.0, 1.0), uniform(r, &PLANE, -1.0, 1.0)],
            build: |t, v| t.add(v[0], v[1]),
        },
        FnCase {
            name: "mul",
            draw: |r| alloc::vec![uniform(r, &X, -1.0, 1.0), uniform(r, &X, -1.0, 1.0)],
            build: |t, v| t.mul(v[0], v[1]),
        },
        FnCase { name: "sum", draw: |r| alloc::vec![uniform(r, &X, -1.0, 1.0)], build: |t, v| Ok(t.sum(v[0])) },
        FnCase {
            name: "combine",
            draw: |r| alloc::vec![uniform(r, &X, -1.0, 1.0), uniform(r, &X, -1.0, 1.0)],
            build: |t, v| {
                let a = t.sum(v[0]);
                let b = t.mul(v[0], v[1])?;
                let b = t.sum(b);
                t.combine(&[(a, 0.7), (b, -1.3)])
            },
        },
        FnCase {
            name: "loss_ssim window3",
            draw: |r| alloc::vec![uniform(r, &PLANE, 0.0, 1.0), uniform(r, &PLANE, 0.0, 1.0)],
            build: |t, v| tape_loss_ssim(t, v[0], v[1], &SsimParams { window: 3, ..SsimParams::default() }),
        },
        FnCase {
            name: "loss_ssim window7",
            draw: |r| alloc::vec![uniform(r, &[2, 1, 8, 8], 0.0, 1.0), uniform(r, &[2, 1, 8, 8], 0.0, 1.0)],
            build: |t, v| tape_loss_ssim(t, v[0], v[1], &SsimParams::default()),
        },
        FnCase { name: "loss_edge", draw: edge_pair, build: |t, v| tape_loss_edge(t, v[0], v[1]) },
        FnCase {
            name: "loss_pixel l1",
            draw: |r| pred_gt_pair(r, &PLANE),
            build: |t, v| tape_loss_pixel(t, v[0], v[1], PixelLossKind::L1),
        },
        FnCase {
            name: "loss_pixel l2",
            draw: |r| pred_gt_pair(r, &PLANE),
            build: |t, v| tape_loss_pixel(t, v[0], v[1], PixelLossKind::L2),
        },
        FnCase {
            name: "loss_pixel berhu",
            draw: |r| pred_gt_pair(r, &PLANE),
            build: |t, v| tape_loss_pixel(t, v[0], v[1], PixelLossKind::Berhu),
        },
        FnCase {
            name: "loss_total",
            draw: |r| {
                let mut v = edge_pair(r);
                let g = v[1].clone();
                // Keep the L1 residuals clear of zero as well.
                for (p, g) in v[0].data_mut().iter_mut().zip(g.data()) {
                    if (*p - g).abs() < 0.01 {
                        *p = g + 0.01;
                    }
                }
                v
            },
            build: |t, v| tape_loss_total(t, v[0], v[1], &LossConfig { ssim: SsimParams { window: 3, ..SsimParams::default() }, ..LossConfig::default() }),
        },
    ];
    cases.into_iter().map(|c| Box::new(c) as Box<dyn GradCase>).collect()
}

/// Whole network with composite loss; inputs are every parameter, the RGB
/// image and the sparse channel.
pub struct ModelCase {
    pub config: ModelConfig,
    pub loss: LossConfig,
    pub coordinates: usize,
}

impl ModelCase {
    /// 1×3×16×16 input, two stages, four base channels.
    pub fn tiny() -> Self {
        Self {
            config: ModelConfig {
                input_height: 16,
                input_width: 16,
                base_channels: 4,
                encoder_stages: 2,
                fusion_mode: FusionMode::ConcatTruncate,
                ..ModelConfig::tiny()
            },
            loss: LossConfig { ssim: SsimParams { window: 3, ..SsimParams::default() }, ..LossConfig::default() },
            coordinates: 6,
        }
    }
}

impl GradCase for ModelCase {
    fn name(&self) -> String {
        format!("model end-to-end ({})", self.config.fusion_mode.name())
    }

    fn inputs(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
        let cfg = ModelConfig { seed: rng.random(), ..self.config.clone() };
        let model: Model<f64> = Model::build(cfg).expect("valid tiny config");
        let (h, w) = (self.config.input_height, self.config.input_width);
        let mut inputs: Vec<Tensor<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
        // Zero biases would put many pre-activations exactly on the kink.
        for (p, t) in model.params().iter().zip(inputs.iter_mut()) {
            if p.name.ends_with(".bias") {
                *t = uniform(rng, t.shape().dims(), -0.1, 0.1);
            }
        }
        inputs.push(uniform(rng, &[1, 3, h, w], 0.0, 1.0));
        let mut sparse = Tensor::zeros(Shape::nchw(1, 1, h, w));
        for v in sparse.data_mut() {
            if rng.random_bool(0.1) {
                *v = rng.random_range(0.01..1.0);
            }
        }
        inputs.push(sparse);
        inputs.push(uniform(rng, &[1, 1, h, w], 0.05, 0.95));
        inputs
    }

    fn forward(&self, tape: &mut Tape<f64>, inputs: &[Var]) -> Result<Var> {
        let model: Model<f64> = Model::build(self.config.clone())?;
        let n = model.params().len();
        let bound = BoundParams::from_vars(inputs[..n].to_vec());
        let pred = model.run(tape, &bound, inputs[n], Some(inputs[n + 1]))?;
        tape_loss_total(tape, pred, inputs[n + 2], &self.loss)
    }

    fn tolerance(&self) -> f64 {
        MODEL_TOLERANCE
    }

    fn coordinates_per_input(&self) -> Option<usize> {
        Some(self.coordinates)
    }
}
