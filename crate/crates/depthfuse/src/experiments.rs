//! Registered desk-scale experiments. Each one runs gen-data → train → eval
//! through the on-disk formats and checks its assertions.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use depthfuse_core::metrics::DivisorConvention;
use depthfuse_core::model::{FusionMode, ModelConfig};
use depthfuse_core::optim::LrSchedule;
use depthfuse_core::augment::AugmentConfig;
use depthfuse_core::synth::{Weather, WeatherMix};
use depthfuse_core::train::dataset_loss;
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{generate_split, load_split, GenerateConfig};
use crate::eval::evaluate_split;
use crate::training::{initial_state, train_to_dir};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
}

impl Bound {
    pub fn holds(self, value: f64) -> bool {
        match self {
            Bound::AtMost(b) => value <= b,
            Bound::AtLeast(b) => value >= b,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::AtMost(b) => write!(f, "<= {b}"),
            Bound::AtLeast(b) => write!(f, ">= {b}"),
        }
    }
}

/// A bound on one reported metric. Non-binding assertions are reported but
/// do not fail the experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct AssertionSpec {
    pub metric: &'static str,
    pub bound: Bound,
    pub binding: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Plan {
    /// Train on a small split and evaluate on the same samples.
    Overfit { samples: usize, weather: Weather },
    /// Train one model per fusion mode with identical seeds and budget, then
    /// compare RMSE on a held-out split.
    Compare { train: usize, test: usize, weather: Weather, modes: [FusionMode; 2] },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub name: &'static str,
    pub description: &'static str,
    pub generator_seed: u64,
    pub run: RunConfig,
    pub plan: Plan,
    pub assertions: Vec<AssertionSpec>,
}

impl ExperimentSpec {
    /// Replaces the data and training seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.generator_seed = seed;
        self.run.set_seed(seed);
        self
    }
}

pub fn overfit4() -> ExperimentSpec {
    let mut run = RunConfig { model: ModelConfig::tiny(), ..RunConfig::default() };
    run.train.epochs = 250;
    run.train.batch_size = 2;
    run.train.schedule = LrSchedule::constant(1e-4);
    run.train.augment = AugmentConfig::disabled();
    run.keep_checkpoints_every = 50;
    ExperimentSpec {
        name: "overfit4",
        description: "4 day samples, 500 Adam steps at lr 1e-4; loss and delta1 on the training samples",
        generator_seed: 4,
        run,
        plan: Plan::Overfit { samples: 4, weather: Weather::Day },
        assertions: vec![
            AssertionSpec { metric: "loss_ratio", bound: Bound::AtMost(0.1), binding: true },
            AssertionSpec { metric: "delta1", bound: Bound::AtLeast(0.95), binding: true },
        ],
    }
}

pub fn fusion_vs_rgb_fog() -> ExperimentSpec {
    let mut run = RunConfig { model: ModelConfig::tiny(), ..RunConfig::default() };
    run.train.epochs = 10;
    run.set_seed(11);
    ExperimentSpec {
        name: "fusion-vs-rgb-fog",
        description: "256 fog samples, 10 epochs per mode; RMSE of concat fusion vs RGB only on 64 held-out fog samples",
        generator_seed: 11,
        run,
        plan: Plan::Compare {
            train: 256,
            test: 64,
            weather: Weather::Fog,
            modes: [FusionMode::ConcatTruncate, FusionMode::RgbOnly],
        },
        assertions: vec![
            AssertionSpec { metric: "rmse_margin", bound: Bound::AtLeast(0.0), binding: true },
            AssertionSpec { metric: "rmse_margin", bound: Bound::AtLeast(0.03), binding: false },
        ],
    }
}

pub fn registry() -> Vec<ExperimentSpec> {
    vec![overfit4(), fusion_vs_rgb_fog()]
}

pub fn find(name: &str) -> Option<ExperimentSpec> {
    registry().into_iter().find(|e| e.name == name)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssertionResult {
    pub metric: String,
    pub value: f64,
    pub bound: Bound,
    pub binding: bool,
    pub passed: bool,
}

/// Everything a rerun with the same seeds reproduces exactly.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Outcome {
    pub name: String,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
    pub assertions: Vec<AssertionResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub outcome: Outcome,
    pub timings: Vec<StageTiming>,
    /// Training output directory of each run.
    pub run_dirs: Vec<PathBuf>,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.outcome.passed
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = &self.outcome;
        writeln!(f, "experiment {}: {}", o.name, if o.passed { "PASS" } else { "FAIL" })?;
        for (k, v) in &o.metrics {
            writeln!(f, "  {k} = {v:.6}")?;
        }
        for a in &o.assertions {
            let tag = match (a.passed, a.binding) {
                (true, _) => "pass",
                (false, true) => "FAIL",
                (false, false) => "miss",
            };
            let kind = if a.binding { "required" } else { "expected" };
            writeln!(f, "  [{tag}] {} = {:.6} {} ({kind})", a.metric, a.value, a.bound)?;
        }
        for t in &self.timings {
            writeln!(f, "  time {}: {:.1}s", t.stage, t.seconds)?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("experiment `{experiment}` failed in stage {stage}: {message}")]
pub struct ExperimentError {
    pub experiment: String,
    pub stage: &'static str,
    pub message: String,
}

struct Runner<'a> {
    spec: &'a ExperimentSpec,
    timings: Vec<StageTiming>,
}

impl Runner<'_> {
    fn stage<T, E: fmt::Display>(
        &mut self,
        stage: &'static str,
        label: String,
        f: impl FnOnce() -> Result<T, E>,
    ) -> Result<T, ExperimentError> {
        let t = Instant::now();
        let out = f().map_err(|e| ExperimentError {
            experiment: self.spec.name.to_string(),
            stage,
            message: e.to_string(),
        });
        self.timings.push(StageTiming { stage: label, seconds: t.elapsed().as_secs_f64() });
        out
    }

    fn generate(&mut self, dir: &Path, count: usize, weather: Weather, seed: u64) -> Result<(), ExperimentError> {
        let cfg = GenerateConfig {
            count,
            width: self.spec.run.model.input_width,
            height: self.spec.run.model.input_height,
            mix: WeatherMix::single(weather),
            seed,
        };
        let label = format!("gen-data {}", dir.file_name().and_then(|n| n.to_str()).unwrap_or(""));
        self.stage("gen-data", label, || generate_split(&cfg, dir).map(|_| ()))
    }
}

/// Runs `spec` inside `work`, which receives the generated splits and one
/// training directory per run.
pub fn run_experiment(
    spec: &ExperimentSpec,
    work: &Path,
    mut progress: impl FnMut(&str),
) -> Result<ExperimentReport, ExperimentError> {
    let mut r = Runner { spec, timings: Vec::new() };
    let mut metrics = BTreeMap::new();
    let mut run_dirs = Vec::new();
    match &spec.plan {
        Plan::Overfit { samples, weather } => {
            let data = work.join("data").join("train");
            r.generate(&data, *samples, *weather, spec.generator_seed)?;
            progress(&format!("{}: generated {samples} samples", spec.name));
            let train = r.stage("gen-data", "load".into(), || load_split(&data))?;
            let run_dir = work.join("run");
            let cfg = &spec.run;
            let (initial, state) = r.stage("train", "train".into(), || {
                let state = initial_state(cfg).map_err(|e| e.to_string())?;
                let initial = dataset_loss(&state.model, &train, &cfg.train.loss).map_err(|e| e.to_string())?;
                let (state, _) = train_to_dir(cfg, state, &train, &[], &run_dir, |_| {}).map_err(|e| e.to_string())?;
                Ok::<_, String>((initial, state))
            })?;
            let last = r.stage("train", "final loss".into(), || dataset_loss(&state.model, &train, &cfg.train.loss))?;
            progress(&format!("{}: trained {} epochs", spec.name, state.epoch));
            let eval = r.stage("eval", "eval".into(), || evaluate_split(&state.model, &data, DivisorConvention::Groundtruth))?;
            r.stage("eval", "write eval".into(), || {
                eval.write(&run_dir.join("eval.csv"), &run_dir.join("eval.jsonl"))
            })?;
            metrics.insert("initial_loss".to_string(), initial);
            metrics.insert("final_loss".to_string(), last);
            metrics.insert("loss_ratio".to_string(), last / initial);
            metrics.insert("delta1".to_string(), eval.mean.delta1);
            metrics.insert("rmse".to_string(), eval.mean.rmse);
            run_dirs.push(run_dir);
        }
        Plan::Compare { train, test, weather, modes } => {
            let train_dir = work.join("data").join("train");
            let test_dir = work.join("data").join("test");
            r.generate(&train_dir, *train, *weather, spec.generator_seed)?;
            r.generate(&test_dir, *test, *weather, spec.generator_seed.wrapping_add(1))?;
            progress(&format!("{}: generated {train} train and {test} test samples", spec.name));
            let train_set = r.stage("gen-data", "load".into(), || load_split(&train_dir))?;
            let test_set = r.stage("gen-data", "load".into(), || load_split(&test_dir))?;
            let mut rmse = Vec::new();
            for mode in modes {
                let mut cfg = spec.run.clone();
                cfg.model.fusion_mode = *mode;
                let run_dir = work.join(format!("run-{}", mode.name()));
                let state = r.stage("train", format!("train {}", mode.name()), || {
                    let state = initial_state(&cfg).map_err(|e| e.to_string())?;
                    let (state, _) = train_to_dir(&cfg, state, &train_set, &test_set, &run_dir, |log| {
                        progress(&format!("{}: {} epoch {} loss {:.5}", spec.name, mode.name(), log.epoch, log.train_loss))
                    })
                    .map_err(|e| e.to_string())?;
                    Ok::<_, String>(state)
                })?;
                let eval = r.stage("eval", format!("eval {}", mode.name()), || {
                    evaluate_split(&state.model, &test_dir, DivisorConvention::Groundtruth)
                })?;
                r.stage("eval", "write eval".into(), || {
                    eval.write(&run_dir.join("eval.csv"), &run_dir.join("eval.jsonl"))
                })?;
                metrics.insert(format!("rmse.{}", mode.name()), eval.mean.rmse);
                metrics.insert(format!("delta1.{}", mode.name()), eval.mean.delta1);
                rmse.push(eval.mean.rmse);
                run_dirs.push(run_dir);
            }
            metrics.insert("rmse_margin".to_string(), (rmse[1] - rmse[0]) / rmse[1]);
        }
    }
    let assertions: Vec<AssertionResult> = spec
        .assertions
        .iter()
        .map(|a| {
            let value = metrics.get(a.metric).copied().unwrap_or(f64::NAN);
            AssertionResult {
                metric: a.metric.to_string(),
                value,
                bound: a.bound,
                binding: a.binding,
                passed: a.bound.holds(value),
            }
        })
        .collect();
    let passed = assertions.iter().all(|a| a.passed || !a.binding);
    Ok(ExperimentReport {
        outcome: Outcome { name: spec.name.to_string(), passed, metrics, assertions },
        timings: r.timings,
        run_dirs,
    })
}
