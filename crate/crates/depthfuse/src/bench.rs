//! Forward-pass timing. Numbers are hardware dependent and only reported.

use std::fmt;
use std::time::Instant;

use depthfuse_core::model::{Model, ModelConfig};
use depthfuse_core::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub model: ModelConfig,
    pub batch: usize,
    pub warmup: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { model: ModelConfig::default(), batch: 1, warmup: 1, iterations: 10, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub base_channels: usize,
    pub fusion_mode: &'static str,
    pub parameters: usize,
    pub batch: usize,
    pub iterations: usize,
    pub mean_seconds_per_frame: f64,
    pub min_seconds_per_frame: f64,
    pub max_seconds_per_frame: f64,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "forward {}x{} base={} fusion={} params={} batch={}: mean {:.4}s/frame (min {:.4}, max {:.4}) over {} iterations",
            self.width,
            self.height,
            self.base_channels,
            self.fusion_mode,
            self.parameters,
            self.batch,
            self.mean_seconds_per_frame,
            self.min_seconds_per_frame,
            self.max_seconds_per_frame,
            self.iterations
        )
    }
}

pub fn run_bench(cfg: &BenchConfig) -> depthfuse_core::Result<BenchReport> {
    if cfg.iterations == 0 || cfg.batch == 0 {
        return Err(depthfuse_core::Error::InvalidArgument("bench needs at least one iteration and one frame".into()));
    }
    let model = Model::<f32>::build(cfg.model.clone())?;
    let (n, h, w) = (cfg.batch, cfg.model.input_height, cfg.model.input_width);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut random = |c: usize| {
        let shape = Shape::nchw(n, c, h, w);
        let data = (0..shape.numel()).map(|_| rng.random::<f32>()).collect();
        Tensor::from_vec(shape, data)
    };
    let rgb = random(3)?;
    let sparse = random(1)?;
    let sparse = cfg.model.fusion_mode.uses_sparse().then_some(&sparse);
    for _ in 0..cfg.warmup {
        model.infer(&rgb, sparse)?;
    }
    let mut times = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let t = Instant::now();
        model.infer(&rgb, sparse)?;
        times.push(t.elapsed().as_secs_f64() / n as f64);
    }
    Ok(BenchReport {
        width: w,
        height: h,
        base_channels: cfg.model.base_channels,
        fusion_mode: cfg.model.fusion_mode.name(),
        parameters: model.num_weights(),
        batch: n,
        iterations: cfg.iterations,
        mean_seconds_per_frame: times.iter().sum::<f64>() / times.len() as f64,
        min_seconds_per_frame: times.iter().copied().fold(f64::INFINITY, f64::min),
        max_seconds_per_frame: times.iter().copied().fold(0.0, f64::max),
    })
}
