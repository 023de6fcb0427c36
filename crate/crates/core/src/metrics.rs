//! Depth evaluation metrics in meters.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{resize_bilinear, DepthMap};

/// Which depth divides the residual in ARD and SRD.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DivisorConvention {
    /// `|d − d*| / d_gt`, the usual convention of KITTI-style benchmarks.
    #[default]
    Groundtruth,
    /// `|d − d*| / d_pred`, the literal reading of the formula as printed.
    Prediction,
}

impl DivisorConvention {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gt" | "groundtruth" => Some(Self::Groundtruth),
            "pred" | "prediction" => Some(Self::Prediction),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Groundtruth => "gt",
            Self::Prediction => "pred",
        }
    }
}

pub const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub rmse: f64,
    pub ard: f64,
    pub srd: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_pixels: usize,
    pub divisor: DivisorConvention,
}

/// Pixels taking part in an evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalMask {
    pub width: usize,
    pub height: usize,
    pub valid: Vec<bool>,
}

impl EvalMask {
    pub fn all(width: usize, height: usize) -> Self {
        Self { width, height, valid: alloc::vec![true; width * height] }
    }

    /// Pixels with positive groundtruth.
    pub fn from_groundtruth(gt: &DepthMap) -> Self {
        Self { width: gt.width, height: gt.height, valid: gt.data.iter().map(|&d| d > 0.0).collect() }
    }

    pub fn count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Sequential compensated sum so reports do not depend on reduction order
/// tricks and stay reproducible.
#[derive(Default)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    fn add(&mut self, v: f64) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

pub fn compute_metrics(
    pred: &DepthMap,
    gt: &DepthMap,
    mask: &EvalMask,
    divisor: DivisorConvention,
) -> Result<MetricsReport> {
    if !pred.same_extent(gt) || mask.width != gt.width || mask.height != gt.height {
        return Err(Error::InvalidArgument(format!(
            "metric inputs differ in size: pred {}x{}, gt {}x{}, mask {}x{}",
            pred.width, pred.height, gt.width, gt.height, mask.width, mask.height
        )));
    }
    let (mut sq, mut abs_rel, mut sq_rel) = (Kahan::default(), Kahan::default(), Kahan::default());
    let mut hits = [0usize; 3];
    let mut n = 0usize;
    for i in 0..gt.data.len() {
        if !mask.valid[i] {
            continue;
        }
        let (d, g) = (pred.data[i], gt.data[i]);
        if !(d > 0.0 && g > 0.0) || !d.is_finite() || !g.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "pixel {i}: masked depths must be positive, got pred {d} gt {g}"
            )));
        }
        let diff = d - g;
        let denom = match divisor {
            DivisorConvention::Groundtruth => g,
            DivisorConvention::Prediction => d,
        };
        sq.add(diff * diff);
        abs_rel.add(diff.abs() / denom);
        sq_rel.add(diff * diff / denom);
        let ratio = (d / g).max(g / d);
        for (hit, thr) in hits.iter_mut().zip(DELTA_THRESHOLDS) {
            if ratio < thr {
                *hit += 1;
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let nf = n as f64;
    Ok(MetricsReport {
        rmse: libm::sqrt(sq.sum / nf),
        ard: abs_rel.sum / nf,
        srd: sq_rel.sum / nf,
        delta1: hits[0] as f64 / nf,
        delta2: hits[1] as f64 / nf,
        delta3: hits[2] as f64 / nf,
        n_pixels: n,
        divisor,
    })
}

/// Bilinearly resizes a low-resolution prediction to the groundtruth grid,
/// then evaluates it.
pub fn evaluate_with_resize(
    pred_lowres: &DepthMap,
    gt_fullres: &DepthMap,
    mask: &EvalMask,
    divisor: DivisorConvention,
) -> Result<MetricsReport> {
    let pred = resize_bilinear(pred_lowres, gt_fullres.width, gt_fullres.height);
    compute_metrics(&pred, gt_fullres, mask, divisor)
}

/// Per-image mean of a set of reports. `n_pixels` is summed.
pub fn mean_report(reports: &[MetricsReport]) -> Option<MetricsReport> {
    let first = reports.first()?;
    let k = reports.len() as f64;
    let avg = |f: fn(&MetricsReport) -> f64| {
        let mut s = Kahan::default();
        reports.iter().for_each(|r| s.add(f(r)));
        s.sum / k
    };
    Some(MetricsReport {
        rmse: avg(|r| r.rmse),
        ard: avg(|r| r.ard),
        srd: avg(|r| r.srd),
        delta1: avg(|r| r.delta1),
        delta2: avg(|r| r.delta2),
        delta3: avg(|r| r.delta3),
        n_pixels: reports.iter().map(|r| r.n_pixels).sum(),
        divisor: first.divisor,
    })
}
