//! Pipeline configuration: a TOML file whose values command-line flags
//! override.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use greenview::dataset::CITYSCAPES_VEGETATION_ID;
use greenview::inference::{open_mask_backend, open_model_backend};
use greenview::{BaselineConfig, Estimator, ModelKind};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Baseline,
    MaskDir { path: PathBuf },
    Model { path: PathBuf, kind: ModelKind },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageryConfig {
    pub endpoint: Option<String>,
    pub requests_per_second: f64,
    pub image_size: (u32, u32),
    pub pitch: f64,
}

impl Default for ImageryConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            requests_per_second: 10.0,
            image_size: (640, 640),
            pitch: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub baseline: BaselineConfig,
    pub backend: BackendConfig,
    pub workers: usize,
    pub cache_dir: PathBuf,
    pub quantiles: (f64, f64),
    pub seed: u64,
    pub vegetation_label_id: u8,
    pub imagery: ImageryConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            baseline: BaselineConfig::default(),
            backend: BackendConfig::Baseline,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            cache_dir: PathBuf::from("greenview-cache"),
            quantiles: (0.05, 0.95),
            seed: 0,
            vegetation_label_id: CITYSCAPES_VEGETATION_ID,
            imagery: ImageryConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses `text`; relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> anyhow::Result<Self> {
        let mut cfg: Self = toml::from_str(text)?;
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.backend {
            BackendConfig::Baseline => {}
            BackendConfig::MaskDir { path } | BackendConfig::Model { path, .. } => rebase(path),
        }
        rebase(&mut cfg.cache_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        let (lo, hi) = self.quantiles;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            bail!("quantiles ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1");
        }
        Ok(())
    }

    pub fn estimator(&self) -> anyhow::Result<Estimator> {
        Ok(match &self.backend {
            BackendConfig::Baseline => Estimator::baseline(self.baseline.clone()),
            BackendConfig::MaskDir { path } => open_mask_backend(path)?,
            BackendConfig::Model { path, kind } => open_model_backend(path, *kind)?,
        })
    }
}
