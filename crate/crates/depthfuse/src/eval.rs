//! Split evaluation with per-sample CSV and JSON-lines reports.

use std::path::{Path, PathBuf};

use depthfuse_core::batch::collate;
use depthfuse_core::metrics::{compute_metrics, mean_report, DivisorConvention, EvalMask, MetricsReport};
use depthfuse_core::model::Model;
use depthfuse_core::synth::Sample;
use serde::Serialize;

use crate::dataset::{list_split, load_sample, DatasetError};
use crate::training::MetricsJson;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub rows: Vec<(String, MetricsReport)>,
    /// Samples without groundtruth.
    pub skipped: Vec<String>,
    pub mean: MetricsReport,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("sample `{id}`: {source}")]
    Sample { id: String, source: depthfuse_core::Error },
    #[error("no sample in {} has groundtruth", .0.display())]
    NothingToEvaluate(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

/// Metric-depth report of one sample.
pub fn evaluate_sample(model: &Model<f32>, sample: &Sample, divisor: DivisorConvention) -> depthfuse_core::Result<MetricsReport> {
    let batch = collate::<f32>(&[sample], &model.config().codec())?;
    let sparse = model.config().fusion_mode.uses_sparse().then_some(&batch.sparse);
    let pred = model.predict_depth(&batch.rgb, sparse)?.remove(0);
    compute_metrics(&pred, &sample.gt, &EvalMask::from_groundtruth(&sample.gt), divisor)
}

pub fn evaluate_split(model: &Model<f32>, dir: &Path, divisor: DivisorConvention) -> Result<EvalOutcome, EvalError> {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for paths in list_split(dir)? {
        if !paths.gt.exists() {
            skipped.push(paths.id.clone());
            continue;
        }
        let sample = load_sample(&paths)?;
        let report = evaluate_sample(model, &sample, divisor).map_err(|source| EvalError::Sample { id: paths.id.clone(), source })?;
        rows.push((paths.id, report));
    }
    let reports: Vec<MetricsReport> = rows.iter().map(|r| r.1).collect();
    let mean = mean_report(&reports).ok_or_else(|| EvalError::NothingToEvaluate(dir.to_path_buf()))?;
    Ok(EvalOutcome { rows, skipped, mean })
}

#[derive(Serialize)]
struct JsonRow<'a> {
    sample_id: &'a str,
    #[serde(flatten)]
    metrics: MetricsJson,
}

#[derive(Serialize)]
struct JsonSummary<'a> {
    sample_id: &'a str,
    #[serde(flatten)]
    metrics: MetricsJson,
    samples: usize,
    skipped: &'a [String],
}

impl EvalOutcome {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["sample_id", "rmse", "ard", "srd", "d1", "d2", "d3"]).expect("in-memory write");
        let mut row = |id: &str, m: &MetricsReport| {
            let vals = [m.rmse, m.ard, m.srd, m.delta1, m.delta2, m.delta3].map(|v| v.to_string());
            let mut rec = vec![id.to_string()];
            rec.extend(vals);
            w.write_record(&rec).expect("in-memory write");
        };
        for (id, m) in &self.rows {
            row(id, m);
        }
        row("mean", &self.mean);
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }

    /// One line per sample, then a summary line with id `mean`.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for (id, m) in &self.rows {
            out.push_str(&serde_json::to_string(&JsonRow { sample_id: id, metrics: m.into() }).expect("serializes"));
            out.push('\n');
        }
        let summary =
            JsonSummary { sample_id: "mean", metrics: (&self.mean).into(), samples: self.rows.len(), skipped: &self.skipped };
        out.push_str(&serde_json::to_string(&summary).expect("serializes"));
        out.push('\n');
        out
    }

    pub fn write(&self, csv_path: &Path, jsonl_path: &Path) -> Result<(), EvalError> {
        for (path, text) in [(csv_path, self.to_csv()), (jsonl_path, self.to_json_lines())] {
            std::fs::write(path, text).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
        }
        Ok(())
    }
}
