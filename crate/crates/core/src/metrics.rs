//! Depth accuracy and efficiency reporting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::train::ProgressRecord;

/// δ thresholds in meters.
pub const DELTA_THRESHOLDS: [f64; 6] = [0.005, 0.01, 0.025, 0.05, 0.1, 0.2];
pub const DELTA_LABELS: [&str; 6] = ["δ<0.5cm", "δ<1cm", "δ<2.5cm", "δ<5cm", "δ<10cm", "δ<20cm"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percentage of pixels below each of [`DELTA_THRESHOLDS`].
    pub delta: [f64; 6],
    pub pixels: usize,
}

impl DepthMetrics {
    /// Metrics over a list of absolute errors.
    pub fn from_errors(errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::NoValidPixels);
        }
        let n = errors.len() as f64;
        let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
        let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
        let mut delta = [0.0; 6];
        for (d, tau) in delta.iter_mut().zip(DELTA_THRESHOLDS) {
            *d = 100.0 * errors.iter().filter(|e| e.abs() < tau).count() as f64 / n;
        }
        Ok(Self {
            mae,
            rmse,
            delta,
            pixels: errors.len(),
        })
    }

    /// Key/value form with the usual column names.
    pub fn to_columns(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        out.insert("MAE".to_string(), self.mae);
        out.insert("RMSE".to_string(), self.rmse);
        for (label, v) in DELTA_LABELS.iter().zip(self.delta) {
            out.insert(label.to_string(), v);
        }
        out
    }
}

/// MAE, RMSE and δ accuracies of `pred` against `gt` over pixels where `valid` is set.
pub fn depth_metrics(pred: &Image, gt: &Image, valid: &[bool]) -> Result<DepthMetrics> {
    pred.check_same_shape(gt)?;
    if pred.channels() != 1 || valid.len() != pred.pixel_count() {
        return Err(Error::ShapeMismatch(format!(
            "depth maps need one channel and a mask of {} pixels",
            pred.pixel_count()
        )));
    }
    let errors: Vec<f64> = pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(valid)
        .filter(|(_, v)| **v)
        .map(|((p, g), _)| p - g)
        .collect();
    DepthMetrics::from_errors(&errors)
}

/// How rendered depth is compared against ground-truth object depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Predicted pixels below this alpha count as missing.
    pub alpha_threshold: f64,
    /// Error charged for a missing pixel (m).
    pub missing_error: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            alpha_threshold: 0.5,
            missing_error: 0.5,
        }
    }
}

/// Per-pixel errors on ground-truth object pixels (`gt > 0`); pixels the
/// prediction leaves uncovered are charged `missing_error`.
pub fn object_depth_errors(pred: &Image, alpha: &Image, gt: &Image, opts: &EvalOptions) -> Result<Vec<f64>> {
    pred.check_same_shape(gt)?;
    pred.check_same_shape(alpha)?;
    Ok(pred
        .data()
        .iter()
        .zip(alpha.data())
        .zip(gt.data())
        .filter(|(_, g)| **g > 0.0)
        .map(|((p, a), g)| {
            if *a < opts.alpha_threshold {
                opts.missing_error
            } else {
                p - g
            }
        })
        .collect())
}

pub fn object_depth_metrics(pred: &Image, alpha: &Image, gt: &Image, opts: &EvalOptions) -> Result<DepthMetrics> {
    DepthMetrics::from_errors(&object_depth_errors(pred, alpha, gt, opts)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub preprocess_s: f64,
    pub optimize_s: f64,
    pub total_s: f64,
    pub gaussians: usize,
}

/// Wall-clock totals of a run; the count is the size of the final scene.
pub fn efficiency_report(preprocess_s: f64, log: &[ProgressRecord], final_count: usize) -> EfficiencyReport {
    let optimize_s = log.last().map_or(0.0, |r| r.elapsed_s);
    EfficiencyReport {
        preprocess_s,
        optimize_s,
        total_s: preprocess_s + optimize_s,
        gaussians: final_count,
    }
}

/// Evaluation file: one entry per view plus the pixel-weighted aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub views: BTreeMap<String, BTreeMap<String, f64>>,
    pub aggregate: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn new(per_view: &[(String, DepthMetrics)], aggregate: &DepthMetrics) -> Self {
        Self {
            views: per_view.iter().map(|(n, m)| (n.clone(), m.to_columns())).collect(),
            aggregate: aggregate.to_columns(),
        }
    }
}
