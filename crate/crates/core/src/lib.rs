//! Green View Index toolkit.
//!
//! Estimates the share of street-level imagery covered by vertical
//! vegetation, either with the classical threshold-and-cluster segmenter or
//! with pluggable mask / direct-estimate backends, and scores estimators
//! against manual labels.

pub mod baseline;
pub mod components;
pub mod dataset;
pub mod geo;
pub mod gvi;
pub mod imaging;
pub mod inference;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use baseline::BaselineConfig;
pub use components::Connectivity;
pub use dataset::{ManifestEntry, SampleManifest, Split, SplitSizes};
pub use geo::{SamplePoint, StreetNetwork};
pub use gvi::{GviMeasurement, Scope, Source};
pub use imaging::{CameraPose, LatLon, RasterImage, VegetationMask};
pub use inference::{EstimateResult, Estimator, EstimatorKind, ModelKind};
pub use metrics::{EvaluationReport, PairedSample};
