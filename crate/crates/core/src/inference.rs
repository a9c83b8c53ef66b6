//! Estimation backends behind one [`Estimator`] interface.
//!
//! Three kinds of estimator exist: the built-in threshold-and-cluster
//! baseline, mask backends (precomputed mask directories or ONNX
//! segmentation models) and direct estimators that regress a single GVI
//! value without producing a mask. For every mask-producing estimator the
//! reported GVI is derived from the mask.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use image::imageops::{self, FilterType};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tract_onnx::pb;
use tract_onnx::prelude::*;

use crate::baseline::{self, BaselineConfig};
use crate::gvi::{gvi_of_mask, GviError, GviMeasurement, Scope, Source};
use crate::imaging::{self, ImagingError, RasterImage, VegetationMask};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("incompatible model {path}: {reason}")]
    IncompatibleModel { path: PathBuf, reason: String },
    #[error("no mask for sample {id:?} at {path}")]
    MissingMaskFile { id: String, path: PathBuf },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Gvi(#[from] GviError),
}

pub type Result<T, E = InferenceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Baseline,
    MaskBackend,
    DirectEstimate,
}

impl EstimatorKind {
    pub fn produces_mask(self) -> bool {
        self != EstimatorKind::DirectEstimate
    }

    pub fn source(self) -> Source {
        match self {
            EstimatorKind::Baseline => Source::Baseline,
            EstimatorKind::MaskBackend => Source::MaskBackend,
            EstimatorKind::DirectEstimate => Source::DirectEstimate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendOutput {
    Mask(VegetationMask),
    /// Percent.
    Gvi(f64),
}

/// A source of vegetation masks or direct GVI estimates.
pub trait Backend: Send + Sync {
    fn kind(&self) -> EstimatorKind;
    fn infer(&self, img: &RasterImage) -> Result<BackendOutput>;
    fn name(&self) -> String;
}

#[derive(Debug, Clone)]
pub struct EstimateResult {
    pub id: String,
    pub gvi: GviMeasurement,
    pub mask: Option<VegetationMask>,
    /// Wall-clock time spent inside the backend.
    pub latency: Duration,
}

#[derive(Clone)]
pub struct Estimator {
    backend: Arc<dyn Backend>,
}

impl fmt::Debug for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Estimator")
            .field("kind", &self.kind())
            .field("backend", &self.backend.name())
            .finish()
    }
}

impl Estimator {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Self {
            backend: Arc::new(backend),
        }
    }

    pub fn baseline(cfg: BaselineConfig) -> Self {
        Self::new(BaselineBackend(cfg))
    }

    pub fn kind(&self) -> EstimatorKind {
        self.backend.kind()
    }

    pub fn produces_mask(&self) -> bool {
        self.kind().produces_mask()
    }

    pub fn name(&self) -> String {
        self.backend.name()
    }

    pub fn estimate(&self, img: &RasterImage) -> Result<EstimateResult> {
        let start = Instant::now();
        let output = self.backend.infer(img)?;
        let latency = start.elapsed();
        let source = self.kind().source();
        match (self.produces_mask(), output) {
            (true, BackendOutput::Mask(mask)) => {
                if mask.dimensions() != (img.width(), img.height()) {
                    return Err(InferenceError::ShapeMismatch(format!(
                        "mask is {:?} but image {} is {}x{}",
                        mask.dimensions(),
                        img.id(),
                        img.width(),
                        img.height()
                    )));
                }
                let gvi = gvi_of_mask(&mask)?.with_id(img.id()).with_source(source);
                Ok(EstimateResult {
                    id: img.id().to_string(),
                    gvi,
                    mask: Some(mask),
                    latency,
                })
            }
            (false, BackendOutput::Gvi(value)) => {
                let gvi = GviMeasurement::new(img.id(), value, Scope::Image, 1, source)
                    .map_err(|e| InferenceError::BackendFailure(e.to_string()))?;
                Ok(EstimateResult {
                    id: img.id().to_string(),
                    gvi,
                    mask: None,
                    latency,
                })
            }
            (_, other) => Err(InferenceError::BackendFailure(format!(
                "{} backend returned {}",
                self.backend.name(),
                match other {
                    BackendOutput::Mask(_) => "a mask",
                    BackendOutput::Gvi(_) => "a bare GVI value",
                }
            ))),
        }
    }
}

pub struct BaselineBackend(pub BaselineConfig);

impl Backend for BaselineBackend {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Baseline
    }

    fn infer(&self, img: &RasterImage) -> Result<BackendOutput> {
        Ok(BackendOutput::Mask(baseline::segment(img, &self.0)))
    }

    fn name(&self) -> String {
        "threshold and cluster".into()
    }
}

/// Direct estimator that returns the same value for every image.
pub struct ConstantBackend(pub f64);

impl Backend for ConstantBackend {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::DirectEstimate
    }

    fn infer(&self, _: &RasterImage) -> Result<BackendOutput> {
        Ok(BackendOutput::Gvi(self.0))
    }

    fn name(&self) -> String {
        format!("constant {}", self.0)
    }
}

/// Serves `<dir>/<id>.png` masks produced by an external segmenter.
pub struct MaskDirBackend {
    dir: PathBuf,
}

impl Backend for MaskDirBackend {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::MaskBackend
    }

    fn infer(&self, img: &RasterImage) -> Result<BackendOutput> {
        let path = self.dir.join(format!("{}.png", img.id()));
        if !path.is_file() {
            return Err(InferenceError::MissingMaskFile {
                id: img.id().to_string(),
                path,
            });
        }
        Ok(BackendOutput::Mask(imaging::mask_from_png(&path)?))
    }

    fn name(&self) -> String {
        format!("masks from {}", self.dir.display())
    }
}

pub fn open_mask_backend(dir: impl AsRef<Path>) -> Result<Estimator> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(InferenceError::BackendFailure(format!(
            "mask directory {} does not exist",
            dir.display()
        )));
    }
    Ok(Estimator::new(MaskDirBackend {
        dir: dir.to_path_buf(),
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Per-pixel vegetation output, `N x 2 x H x W` logits or
    /// `N x 1 x H x W` probabilities.
    Segmentation,
    /// A single GVI scalar per image, `N x 1`.
    Regression,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "segmentation" => Ok(ModelKind::Segmentation),
            "regression" => Ok(ModelKind::Regression),
            other => Err(format!("unknown model kind {other:?} (expected segmentation or regression)")),
        }
    }
}

/// Per-channel input normalization applied after scaling pixels to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

struct OnnxBackend {
    path: PathBuf,
    kind: ModelKind,
    plan: Arc<TypedRunnableModel>,
    input_width: u32,
    input_height: u32,
    norm: Normalization,
}

fn incompatible(path: &Path, reason: impl Into<String>) -> InferenceError {
    InferenceError::IncompatibleModel {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn declared_input_shape(proto: &pb::ModelProto) -> Option<Vec<Option<i64>>> {
    let graph = proto.graph.as_ref()?;
    let initializers: Vec<&str> = graph.initializer.iter().map(|t| t.name.as_str()).collect();
    let input = graph
        .input
        .iter()
        .find(|i| !initializers.contains(&i.name.as_str()))?;
    let tensor = match input.r#type.as_ref()?.value.as_ref()? {
        pb::type_proto::Value::TensorType(t) => t,
        #[allow(unreachable_patterns)]
        _ => return None,
    };
    let dims = tensor
        .shape
        .as_ref()?
        .dim
        .iter()
        .map(|d| match d.value {
            Some(pb::tensor_shape_proto::dimension::Value::DimValue(v)) if v > 0 => Some(v),
            _ => None,
        })
        .collect();
    Some(dims)
}

impl Normalization {
    fn validated(self) -> std::result::Result<Self, String> {
        if self.std.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err("std entries must be positive".into());
        }
        Ok(self)
    }
}

fn parse_norm(mean: &str, std: &str) -> std::result::Result<Normalization, String> {
    let mean: [f32; 3] = serde_json::from_str(mean).map_err(|e| format!("mean: {e}"))?;
    let std: [f32; 3] = serde_json::from_str(std).map_err(|e| format!("std: {e}"))?;
    Normalization { mean, std }.validated()
}

/// Sidecar normalization file next to a model: `model.onnx` -> `model.json`.
pub fn sidecar_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("json")
}

fn load_normalization(path: &Path, proto: &pb::ModelProto) -> Result<Normalization> {
    let sidecar = sidecar_path(path);
    if sidecar.is_file() {
        let text = std::fs::read_to_string(&sidecar).map_err(|e| {
            incompatible(path, format!("cannot read sidecar {}: {e}", sidecar.display()))
        })?;
        let norm: Normalization = serde_json::from_str(&text)
            .map_err(|e| incompatible(path, format!("sidecar {}: {e}", sidecar.display())))?;
        return norm.validated().map_err(|e| incompatible(path, e));
    }
    let prop = |key: &str| {
        proto
            .metadata_props
            .iter()
            .find(|p| p.key == key)
            .map(|p| p.value.as_str())
    };
    match (prop("mean"), prop("std")) {
        (Some(mean), Some(std)) => parse_norm(mean, std).map_err(|e| incompatible(path, e)),
        (None, None) => Ok(Normalization::default()),
        _ => Err(incompatible(path, "metadata carries only one of mean/std")),
    }
}

/// Loads an ONNX model taking a single `N x 3 x H x W` float image input.
pub fn open_model_backend(model_path: impl AsRef<Path>, kind: ModelKind) -> Result<Estimator> {
    let path = model_path.as_ref();
    let framework = tract_onnx::onnx();
    let proto = framework
        .proto_model_for_path(path)
        .map_err(|e| InferenceError::BackendFailure(format!("{}: {e:#}", path.display())))?;

    let dims = declared_input_shape(&proto)
        .ok_or_else(|| incompatible(path, "no tensor input with a declared shape"))?;
    let (height, width) = match dims.as_slice() {
        [batch, Some(3), Some(h), Some(w)] if batch.is_none_or(|b| b == 1) => (*h, *w),
        other => {
            return Err(incompatible(
                path,
                format!("expected input N x 3 x H x W with fixed H, W; found {other:?}"),
            ))
        }
    };
    let norm = load_normalization(path, &proto)?;

    let dir = path.parent().and_then(|d| d.to_str());
    let parsed = framework
        .parse(&proto, dir)
        .map_err(|e| incompatible(path, format!("{e:#}")))?;
    let typed = parsed
        .model
        .with_input_fact(0, f32::fact([1, 3, height as usize, width as usize]).into())
        .and_then(|m| m.into_optimized())
        .map_err(|e| incompatible(path, format!("{e:#}")))?;
    if typed.outputs.len() != 1 {
        return Err(incompatible(path, format!("expected one output, found {}", typed.outputs.len())));
    }
    let out_fact = typed
        .output_fact(0)
        .map_err(|e| incompatible(path, format!("{e:#}")))?;
    let out_shape: Option<Vec<usize>> = out_fact.shape.as_concrete().map(|s| s.to_vec());
    let signature_ok = match (kind, out_shape.as_deref()) {
        (ModelKind::Segmentation, Some([1, c, _, _])) => *c == 1 || *c == 2,
        (ModelKind::Regression, Some([1, 1]) | Some([1])) => true,
        _ => false,
    };
    if !signature_ok {
        return Err(incompatible(
            path,
            format!("output shape {out_shape:?} does not fit a {kind:?} model"),
        ));
    }
    let plan = typed
        .into_runnable()
        .map_err(|e| incompatible(path, format!("{e:#}")))?;

    Ok(Estimator::new(OnnxBackend {
        path: path.to_path_buf(),
        kind,
        plan,
        input_width: width as u32,
        input_height: height as u32,
        norm,
    }))
}

impl OnnxBackend {
    fn input_tensor(&self, img: &RasterImage) -> Tensor {
        let (w, h) = (self.input_width, self.input_height);
        let rgb = img.to_rgb_image();
        let resized = if (img.width(), img.height()) == (w, h) {
            rgb
        } else {
            imageops::resize(&rgb, w, h, FilterType::Triangle)
        };
        let plane = (w * h) as usize;
        let mut data = vec![0f32; 3 * plane];
        for (i, px) in resized.pixels().enumerate() {
            for c in 0..3 {
                data[c * plane + i] = (px[c] as f32 / 255.0 - self.norm.mean[c]) / self.norm.std[c];
            }
        }
        Tensor::from_shape(&[1, 3, h as usize, w as usize], &data).expect("shape matches data")
    }
}

impl Backend for OnnxBackend {
    fn kind(&self) -> EstimatorKind {
        match self.kind {
            ModelKind::Segmentation => EstimatorKind::MaskBackend,
            ModelKind::Regression => EstimatorKind::DirectEstimate,
        }
    }

    fn infer(&self, img: &RasterImage) -> Result<BackendOutput> {
        let input = self.input_tensor(img);
        let outputs = self
            .plan
            .run(tvec!(input.into()))
            .map_err(|e| InferenceError::BackendFailure(format!("{}: {e:#}", self.path.display())))?;
        let view = outputs[0]
            .to_plain_array_view::<f32>()
            .map_err(|e| InferenceError::BackendFailure(format!("{e:#}")))?;
        match self.kind {
            ModelKind::Regression => {
                let value = view
                    .iter()
                    .next()
                    .copied()
                    .ok_or_else(|| InferenceError::BackendFailure("empty regression output".into()))?;
                if value.is_nan() {
                    return Err(InferenceError::BackendFailure("model produced NaN".into()));
                }
                Ok(BackendOutput::Gvi((value as f64).clamp(0.0, 100.0)))
            }
            ModelKind::Segmentation => {
                let shape = view.shape();
                if shape.len() != 4
                    || shape[2] != self.input_height as usize
                    || shape[3] != self.input_width as usize
                {
                    return Err(InferenceError::ShapeMismatch(format!(
                        "segmentation output {shape:?} does not cover the {}x{} model input",
                        self.input_width, self.input_height
                    )));
                }
                let (h, w) = (self.input_height, self.input_width);
                let two_class = shape[1] == 2;
                let mask = VegetationMask::from_fn(w, h, |x, y| {
                    let (x, y) = (x as usize, y as usize);
                    if two_class {
                        view[[0, 1, y, x]] > view[[0, 0, y, x]]
                    } else {
                        view[[0, 0, y, x]] >= 0.5
                    }
                });
                Ok(BackendOutput::Mask(mask.resize_nearest(img.width(), img.height())))
            }
        }
    }

    fn name(&self) -> String {
        format!("{:?} model {}", self.kind, self.path.display())
    }
}
