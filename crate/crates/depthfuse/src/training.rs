//! File-backed training: JSON-lines epoch log and a checkpoint per epoch.

use std::io::Write;
use std::path::{Path, PathBuf};

use depthfuse_core::metrics::{DivisorConvention, MetricsReport};
use depthfuse_core::model::Model;
use depthfuse_core::synth::Sample;
use depthfuse_core::train::{evaluate, run_epoch, TrainState};
use serde::Serialize;

use crate::config::RunConfig;
use crate::formats::{write_checkpoint, FormatError};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

pub fn epoch_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:03}.ckpt"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsJson {
    pub rmse: f64,
    pub ard: f64,
    pub srd: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub n_pixels: usize,
    pub divisor: &'static str,
}

impl From<&MetricsReport> for MetricsJson {
    fn from(m: &MetricsReport) -> Self {
        Self {
            rmse: m.rmse,
            ard: m.ard,
            srd: m.srd,
            d1: m.delta1,
            d2: m.delta2,
            d3: m.delta3,
            n_pixels: m.n_pixels,
            divisor: m.divisor.name(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub train_loss: f64,
    pub val: Option<MetricsJson>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(depthfuse_core::Error),
    #[error("sample `{id}` is {got}, model expects {want}")]
    SampleSize { id: String, got: String, want: String },
    #[error("training stopped in epoch {epoch}: {source}; last good checkpoint: {}", last_checkpoint.as_ref().map_or("none".into(), |p| p.display().to_string()))]
    Diverged { epoch: usize, last_checkpoint: Option<PathBuf>, source: depthfuse_core::Error },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

fn check_sizes(cfg: &RunConfig, samples: &[Sample]) -> Result<(), TrainError> {
    let (w, h) = (cfg.model.input_width, cfg.model.input_height);
    for s in samples {
        if (s.width(), s.height()) != (w, h) {
            return Err(TrainError::SampleSize {
                id: s.meta.id.clone(),
                got: format!("{}x{}", s.width(), s.height()),
                want: format!("{w}x{h}"),
            });
        }
    }
    Ok(())
}

/// Fresh training state for `cfg`.
pub fn initial_state(cfg: &RunConfig) -> Result<TrainState, TrainError> {
    let model = Model::build(cfg.model.clone()).map_err(TrainError::Config)?;
    Ok(TrainState::new(model, cfg.train.adam))
}

/// Trains from `state.epoch + 1` up to `cfg.train.epochs`. A fresh run
/// truncates the log; a resumed run appends to it.
pub fn train_to_dir(
    cfg: &RunConfig,
    mut state: TrainState,
    train: &[Sample],
    val: &[Sample],
    out_dir: &Path,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(TrainState, Vec<EpochLog>), TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    if state.model.config() != &cfg.model {
        return Err(TrainError::Config(depthfuse_core::Error::InvalidArgument(
            "checkpoint model configuration differs from the run configuration".into(),
        )));
    }
    check_sizes(cfg, train)?;
    check_sizes(cfg, val)?;
    if train.len() < cfg.train.batch_size {
        return Err(TrainError::Config(depthfuse_core::Error::InvalidArgument(format!(
            "{} training samples cannot fill a batch of {}",
            train.len(),
            cfg.train.batch_size
        ))));
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TrainError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let log_path = out_dir.join(LOG_FILE);
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(state.epoch > 0)
        .truncate(state.epoch == 0)
        .open(&log_path)
        .map_err(io(&log_path))?;
    let mut last_checkpoint = (state.epoch > 0).then(|| out_dir.join(LAST_CHECKPOINT)).filter(|p| p.exists());
    let mut logs = Vec::new();
    while state.epoch < cfg.train.epochs {
        let epoch = state.epoch + 1;
        let mut next = state.clone();
        let stats = run_epoch(&mut next, train, &cfg.train)
            .map_err(|source| TrainError::Diverged { epoch, last_checkpoint: last_checkpoint.clone(), source })?;
        state = next;
        let val = if val.is_empty() {
            None
        } else {
            let (mean, _) = evaluate(&state.model, val, DivisorConvention::Groundtruth).map_err(TrainError::Config)?;
            Some(MetricsJson::from(&mean))
        };
        let entry = EpochLog { epoch, lr: stats.lr, steps: stats.steps, train_loss: stats.mean_loss, val };
        let line = serde_json::to_string(&entry).expect("log entry serializes");
        writeln!(log, "{line}").map_err(io(&log_path))?;
        let last = out_dir.join(LAST_CHECKPOINT);
        write_checkpoint(&last, &state)?;
        if epoch % cfg.keep_checkpoints_every == 0 || epoch == cfg.train.epochs {
            write_checkpoint(&epoch_checkpoint(out_dir, epoch), &state)?;
        }
        last_checkpoint = Some(last);
        on_epoch(&entry);
        logs.push(entry);
    }
    log.flush().map_err(io(&log_path))?;
    Ok((state, logs))
}
