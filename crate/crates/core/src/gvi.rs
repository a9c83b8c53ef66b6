//! Green View Index computation and aggregation.
//!
//! GVI is always expressed in percent. An image's GVI is the fraction of its
//! pixels classified as vegetation; a point's GVI is the unweighted mean of its
//! images, and a city's GVI the unweighted mean of its points. The pooled
//! variant ([`aggregate_pooled`]) divides summed vegetation pixels by summed
//! pixels instead.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::VegetationMask;

#[derive(Debug, Error, PartialEq)]
pub enum GviError {
    #[error("mask has no pixels")]
    EmptyMask,
    #[error("nothing to aggregate")]
    EmptyAggregate,
    #[error("cannot aggregate {found} measurements into {target} scope")]
    MixedScope { found: Scope, target: Scope },
    #[error("measurements come from different sources ({0} and {1})")]
    MixedSource(Source, Source),
    #[error("measurement {0:?} carries no pixel counts, pooled aggregation impossible")]
    MissingPixelCounts(String),
    #[error("invalid GVI measurement: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Image,
    Point,
    City,
}

impl Scope {
    /// The scope whose measurements are averaged into this one.
    pub fn finer(self) -> Option<Scope> {
        match self {
            Scope::Image => None,
            Scope::Point => Some(Scope::Image),
            Scope::City => Some(Scope::Point),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Image => "image",
            Scope::Point => "point",
            Scope::City => "city",
        })
    }
}

/// Which estimator produced a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Baseline,
    MaskBackend,
    DirectEstimate,
    ManualLabel,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Baseline => "baseline",
            Source::MaskBackend => "mask_backend",
            Source::DirectEstimate => "direct_estimate",
            Source::ManualLabel => "manual_label",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Source::Baseline),
            "mask_backend" => Ok(Source::MaskBackend),
            "direct_estimate" => Ok(Source::DirectEstimate),
            "manual_label" => Ok(Source::ManualLabel),
            other => Err(format!("unknown GVI source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelCounts {
    pub vegetation: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GviMeasurement {
    pub id: String,
    /// Percent in `[0, 100]`.
    pub value: f64,
    pub scope: Scope,
    pub n_images: usize,
    pub source: Source,
    /// Present when the value was derived from masks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixels: Option<PixelCounts>,
}

impl GviMeasurement {
    pub fn new(
        id: impl Into<String>,
        value: f64,
        scope: Scope,
        n_images: usize,
        source: Source,
    ) -> Result<Self, GviError> {
        if !(0.0..=100.0).contains(&value) {
            return Err(GviError::Invalid(format!("value {value} outside [0, 100]")));
        }
        if n_images == 0 {
            return Err(GviError::Invalid("n_images must be at least 1".into()));
        }
        Ok(Self {
            id: id.into(),
            value,
            scope,
            n_images,
            source,
            pixels: None,
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }
}

/// Per-image GVI: `100 * vegetation / total`.
pub fn gvi_of_mask(mask: &VegetationMask) -> Result<GviMeasurement, GviError> {
    let total = mask.total_pixels();
    if total == 0 {
        return Err(GviError::EmptyMask);
    }
    let vegetation = mask.vegetation_pixel_count();
    let mut m = GviMeasurement::new(
        String::new(),
        percent(vegetation as u64, total as u64),
        Scope::Image,
        1,
        Source::MaskBackend,
    )?;
    m.pixels = Some(PixelCounts {
        vegetation: vegetation as u64,
        total: total as u64,
    });
    Ok(m)
}

fn percent(part: u64, total: u64) -> f64 {
    100.0 * part as f64 / total as f64
}

fn check_inputs(
    measurements: &[GviMeasurement],
    scope: Scope,
) -> Result<Vec<&GviMeasurement>, GviError> {
    let first = measurements.first().ok_or(GviError::EmptyAggregate)?;
    let finer = scope.finer();
    for m in measurements {
        if Some(m.scope) != finer {
            return Err(GviError::MixedScope {
                found: m.scope,
                target: scope,
            });
        }
        if m.source != first.source {
            return Err(GviError::MixedSource(first.source, m.source));
        }
    }
    // Fixed reduction order regardless of how the inputs were collected.
    let mut sorted: Vec<&GviMeasurement> = measurements.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id).then(a.value.total_cmp(&b.value)));
    Ok(sorted)
}

/// Unweighted mean of finer-scope measurements.
pub fn aggregate(measurements: &[GviMeasurement], scope: Scope) -> Result<GviMeasurement, GviError> {
    let sorted = check_inputs(measurements, scope)?;
    let sum: f64 = sorted.iter().map(|m| m.value).sum();
    let mean = (sum / sorted.len() as f64).clamp(0.0, 100.0);
    let n_images = sorted.iter().map(|m| m.n_images).sum();
    let pixels = sum_pixels(&sorted);
    let mut out = GviMeasurement::new(String::new(), mean, scope, n_images, sorted[0].source)?;
    out.pixels = pixels;
    Ok(out)
}

/// Pooled-pixel aggregation: summed vegetation pixels over summed pixels.
pub fn aggregate_pooled(
    measurements: &[GviMeasurement],
    scope: Scope,
) -> Result<GviMeasurement, GviError> {
    let sorted = check_inputs(measurements, scope)?;
    if let Some(m) = sorted.iter().find(|m| m.pixels.is_none()) {
        return Err(GviError::MissingPixelCounts(m.id.clone()));
    }
    let pixels = sum_pixels(&sorted).expect("checked above");
    if pixels.total == 0 {
        return Err(GviError::EmptyMask);
    }
    let n_images = sorted.iter().map(|m| m.n_images).sum();
    let mut out = GviMeasurement::new(
        String::new(),
        percent(pixels.vegetation, pixels.total),
        scope,
        n_images,
        sorted[0].source,
    )?;
    out.pixels = Some(pixels);
    Ok(out)
}

fn sum_pixels(ms: &[&GviMeasurement]) -> Option<PixelCounts> {
    ms.iter().try_fold(
        PixelCounts {
            vegetation: 0,
            total: 0,
        },
        |acc, m| {
            m.pixels.map(|p| PixelCounts {
                vegetation: acc.vegetation + p.vegetation,
                total: acc.total + p.total,
            })
        },
    )
}
