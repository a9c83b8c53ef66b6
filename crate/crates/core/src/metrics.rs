//! Estimator evaluation: IoU, mean IoU, MAE, Pearson's r and signed-error
//! quantile bounds, assembled into an [`EvaluationReport`].
//!
//! All arithmetic is `f64`. Sample-level reductions always run in id order
//! so that a report does not depend on how its samples were collected.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::VegetationMask;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("masks differ in size: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("sample {0:?} lacks a predicted or true mask")]
    MissingMask(String),
    #[error("no samples")]
    EmptyInput,
    #[error("a series has zero variance, correlation undefined")]
    ZeroVariance,
    #[error("Pearson's r needs at least two samples")]
    TooFewSamples,
    #[error("invalid quantiles ({lo}, {hi})")]
    InvalidQuantile { lo: f64, hi: f64 },
    #[error("invalid sample {id:?}: {reason}")]
    InvalidSample { id: String, reason: String },
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// One estimator output paired with its manual label.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub predicted_gvi: f64,
    pub true_gvi: f64,
    pub predicted_mask: Option<VegetationMask>,
    pub true_mask: Option<VegetationMask>,
}

impl PairedSample {
    pub fn new(id: impl Into<String>, predicted_gvi: f64, true_gvi: f64) -> Self {
        Self {
            id: id.into(),
            predicted_gvi,
            true_gvi,
            predicted_mask: None,
            true_mask: None,
        }
    }

    pub fn with_masks(mut self, predicted: VegetationMask, truth: VegetationMask) -> Self {
        self.predicted_mask = Some(predicted);
        self.true_mask = Some(truth);
        self
    }

    pub fn signed_error(&self) -> f64 {
        self.predicted_gvi - self.true_gvi
    }

    fn validate(&self) -> Result<()> {
        let bad = |reason: String| MetricsError::InvalidSample {
            id: self.id.clone(),
            reason,
        };
        for (name, v) in [("predicted_gvi", self.predicted_gvi), ("true_gvi", self.true_gvi)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(bad(format!("{name} {v} outside [0, 100]")));
            }
        }
        if let (Some(p), Some(t)) = (&self.predicted_mask, &self.true_mask) {
            if p.dimensions() != t.dimensions() {
                return Err(MetricsError::DimensionMismatch(p.dimensions(), t.dimensions()));
            }
        }
        Ok(())
    }
}

fn overlap(pred: &VegetationMask, truth: &VegetationMask) -> Result<(usize, usize)> {
    if pred.dimensions() != truth.dimensions() {
        return Err(MetricsError::DimensionMismatch(pred.dimensions(), truth.dimensions()));
    }
    Ok(pred
        .bits()
        .iter()
        .zip(truth.bits())
        .fold((0, 0), |(i, u), (&p, &t)| (i + (p && t) as usize, u + (p || t) as usize)))
}

/// Vegetation-class intersection over union. Two empty masks agree
/// perfectly and score 1.
pub fn iou(pred: &VegetationMask, truth: &VegetationMask) -> Result<f64> {
    let (inter, union) = overlap(pred, truth)?;
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

fn mask_pairs(samples: &[PairedSample]) -> Result<Vec<(&VegetationMask, &VegetationMask)>> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    sorted_by_id(samples)
        .into_iter()
        .map(|s| match (&s.predicted_mask, &s.true_mask) {
            (Some(p), Some(t)) => Ok((p, t)),
            _ => Err(MetricsError::MissingMask(s.id.clone())),
        })
        .collect()
}

/// Mean over images of per-image IoU, in percent.
pub fn mean_iou(samples: &[PairedSample]) -> Result<f64> {
    let pairs = mask_pairs(samples)?;
    let mut sum = 0.0;
    for (p, t) in &pairs {
        sum += iou(p, t)?;
    }
    Ok(100.0 * sum / pairs.len() as f64)
}

/// Dataset-pooled IoU in percent: total intersection over total union.
pub fn pooled_iou(samples: &[PairedSample]) -> Result<f64> {
    let pairs = mask_pairs(samples)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, t) in &pairs {
        let (i, u) = overlap(p, t)?;
        inter += i;
        union += u;
    }
    Ok(if union == 0 {
        100.0
    } else {
        100.0 * inter as f64 / union as f64
    })
}

fn sorted_by_id(samples: &[PairedSample]) -> Vec<&PairedSample> {
    let mut v: Vec<&PairedSample> = samples.iter().collect();
    v.sort_by(|a, b| {
        a.id.cmp(&b.id)
            .then(a.predicted_gvi.total_cmp(&b.predicted_gvi))
            .then(a.true_gvi.total_cmp(&b.true_gvi))
    });
    v
}

pub fn mae(samples: &[PairedSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let sum: f64 = sorted_by_id(samples)
        .iter()
        .map(|s| s.signed_error().abs())
        .sum();
    Ok(sum / samples.len() as f64)
}

/// Pearson's correlation between predicted and true GVI (two-pass form).
pub fn pearson_r(samples: &[PairedSample]) -> Result<f64> {
    match samples.len() {
        0 => return Err(MetricsError::EmptyInput),
        1 => return Err(MetricsError::TooFewSamples),
        _ => {}
    }
    let sorted = sorted_by_id(samples);
    let n = sorted.len() as f64;
    let mean_x = sorted.iter().map(|s| s.predicted_gvi).sum::<f64>() / n;
    let mean_y = sorted.iter().map(|s| s.true_gvi).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for s in &sorted {
        let dx = s.predicted_gvi - mean_x;
        let dy = s.true_gvi - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Linear-interpolation quantile between closest ranks (`h = (n - 1) p`).
/// Reorders `values` in place.
pub fn quantile_in_place(values: &mut [f64], p: f64) -> f64 {
    debug_assert!(!values.is_empty() && (0.0..=1.0).contains(&p));
    let h = (values.len() - 1) as f64 * p;
    let j = h.floor() as usize;
    let (_, &mut at_j, upper) = values.select_nth_unstable_by(j, f64::total_cmp);
    let frac = h - j as f64;
    if frac == 0.0 || upper.is_empty() {
        return at_j;
    }
    let next = upper
        .iter()
        .copied()
        .min_by(f64::total_cmp)
        .expect("non-empty upper partition");
    at_j + frac * (next - at_j)
}

/// Quantiles `(lo, hi)` of the signed errors `predicted - true`.
pub fn error_bounds(samples: &[PairedSample], lo: f64, hi: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(MetricsError::InvalidQuantile { lo, hi });
    }
    if samples.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut errors: Vec<f64> = samples.iter().map(PairedSample::signed_error).collect();
    let q_lo = quantile_in_place(&mut errors, lo);
    let q_hi = quantile_in_place(&mut errors, hi);
    Ok((q_lo, q_hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouMode {
    #[default]
    PerImage,
    Pooled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub quantiles: (f64, f64),
    pub iou_mode: IouMode,
    /// Name of the split the samples were drawn from, recorded in the report.
    pub split: Option<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            quantiles: (0.05, 0.95),
            iou_mode: IouMode::PerImage,
            split: None,
        }
    }
}

/// Accumulated backend latency over an evaluation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub total_seconds: f64,
    pub images: usize,
}

impl Timing {
    pub fn seconds_per_10k(&self) -> f64 {
        self.total_seconds / self.images as f64 * 10_000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Percent; absent when any sample lacks masks.
    pub mean_iou: Option<f64>,
    pub iou_mode: IouMode,
    pub mae: f64,
    /// Absent for single-sample evaluations.
    pub pearson_r: Option<f64>,
    pub err_p5: f64,
    pub err_p95: f64,
    pub quantiles: (f64, f64),
    pub n: usize,
    pub split: Option<String>,
    pub running_time_s_per_10k: Option<f64>,
}

pub fn evaluate(
    samples: &[PairedSample],
    timing: Option<Timing>,
    options: &EvalOptions,
) -> Result<EvaluationReport> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    for s in samples {
        s.validate()?;
    }
    let has_masks = samples
        .iter()
        .all(|s| s.predicted_mask.is_some() && s.true_mask.is_some());
    let mean_iou = if has_masks {
        Some(match options.iou_mode {
            IouMode::PerImage => mean_iou(samples)?,
            IouMode::Pooled => pooled_iou(samples)?,
        })
    } else {
        None
    };
    let (lo, hi) = options.quantiles;
    let (err_p5, err_p95) = error_bounds(samples, lo, hi)?;
    Ok(EvaluationReport {
        mean_iou,
        iou_mode: options.iou_mode,
        mae: mae(samples)?,
        pearson_r: if samples.len() >= 2 {
            Some(pearson_r(samples)?)
        } else {
            None
        },
        err_p5,
        err_p95,
        quantiles: options.quantiles,
        n: samples.len(),
        split: options.split.clone(),
        running_time_s_per_10k: timing.map(|t| t.seconds_per_10k()),
    })
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Formats with at least three significant digits, adding digits (up to six)
/// only while the shorter form would misstate the value.
pub fn format_sig(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let mut out = String::new();
    for sig in 3..=6 {
        let decimals = if v == 0.0 {
            (sig - 1) as usize
        } else {
            let exp = v.abs().log10().floor() as i32;
            (sig - 1 - exp).max(0) as usize
        };
        out = format!("{v:.decimals$}");
        let back: f64 = out.parse().expect("formatted float parses");
        if (back - v).abs() <= 1e-9 * v.abs().max(1.0) {
            break;
        }
    }
    if out.starts_with('-') && out[1..].chars().all(|c| c == '0' || c == '.') {
        out.remove(0);
    }
    out
}

fn format_percentile(p: f64) -> String {
    let pct = p * 100.0;
    if pct.fract() == 0.0 {
        format!("{pct:.0}")
    } else {
        format!("{pct}")
    }
}

/// Renders reports as an aligned plain-text table with one row per model,
/// columns in the order mean IoU, MAE, Pearson, error bounds, running time.
pub fn render_table(rows: &[(&str, &EvaluationReport)]) -> String {
    let (lo, hi) = rows
        .first()
        .map(|(_, r)| r.quantiles)
        .unwrap_or((0.05, 0.95));
    let header = [
        "Model".to_string(),
        "Mean IoU (%)".to_string(),
        "Mean Absolute Error (%)".to_string(),
        "Pearson's Correlation Coefficient".to_string(),
        format!(
            "{}%-{}% of GVI Estimation Error (%)",
            format_percentile(lo),
            format_percentile(hi)
        ),
        "Running Time for 10000 images (seconds)".to_string(),
    ];
    let na = || "NA".to_string();
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|(name, r)| {
            [
                name.to_string(),
                r.mean_iou.map(format_sig).unwrap_or_else(na),
                format_sig(r.mae),
                r.pearson_r.map(format_sig).unwrap_or_else(na),
                format!("{}, {}", format_sig(r.err_p5), format_sig(r.err_p95)),
                r.running_time_s_per_10k.map(format_sig).unwrap_or_else(na),
            ]
        })
        .collect();

    let mut widths = header.clone().map(|h| h.chars().count());
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }

    let mut out = String::new();
    let line = |out: &mut String, cells: &[String; 6]| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            let pad = w - cell.chars().count();
            if i > 0 {
                s.push_str("  ");
            }
            if i == 0 {
                s.push_str(cell);
                s.extend(std::iter::repeat_n(' ', pad));
            } else {
                s.extend(std::iter::repeat_n(' ', pad));
                s.push_str(cell);
            }
        }
        let _ = writeln!(out, "{}", s.trim_end());
    };
    line(&mut out, &header);
    line(&mut out, &widths.map(|w| "-".repeat(w)));
    for row in &body {
        line(&mut out, row);
    }
    out
}
