//! Throughput benchmark over a manifest.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::commands::{load_image, load_manifest, run_pool, Context};
use crate::output::Outputs;
use crate::usage;

/// Published running times per 10,000 images, shown for context only.
const REFERENCE_ROWS: [(&str, f64); 2] = [("end-to-end", 38.9), ("threshold and cluster", 3665.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub backend: String,
    pub images: usize,
    pub workers: usize,
    pub repeats: usize,
    pub wall_seconds: Vec<f64>,
    pub median_wall_seconds: f64,
    pub images_per_second: f64,
    pub seconds_per_10k_images: f64,
    pub hours_per_1m_images: f64,
}

impl BenchmarkReport {
    pub fn new(backend: String, images: usize, workers: usize, mut wall_seconds: Vec<f64>) -> Self {
        let runs = wall_seconds.clone();
        wall_seconds.sort_by(f64::total_cmp);
        let median = wall_seconds[wall_seconds.len() / 2];
        let per_image = median / images as f64;
        Self {
            backend,
            images,
            workers,
            repeats: runs.len(),
            wall_seconds: runs,
            median_wall_seconds: median,
            images_per_second: images as f64 / median,
            seconds_per_10k_images: per_image * 10_000.0,
            hours_per_1m_images: per_image * 1_000_000.0 / 3600.0,
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "backend                       {}", self.backend);
        let _ = writeln!(s, "images                        {}", self.images);
        let _ = writeln!(s, "workers                       {}", self.workers);
        let _ = writeln!(s, "median wall time (s)          {:.4}", self.median_wall_seconds);
        let _ = writeln!(s, "images per second             {:.2}", self.images_per_second);
        let _ = writeln!(s, "seconds per 10,000 images     {:.2}", self.seconds_per_10k_images);
        let _ = writeln!(s, "hours per 1,000,000 images    {:.3}", self.hours_per_1m_images);
        let _ = writeln!(s);
        let _ = writeln!(s, "published reference (different hardware), seconds per 10,000 images:");
        for (name, secs) in REFERENCE_ROWS {
            let _ = writeln!(s, "  {name:<22}{secs}");
        }
        s
    }
}

/// Decodes and estimates every manifest image `repeats` times; reports the
/// median wall time.
pub fn benchmark(ctx: &Context, manifest_path: &Path, repeats: usize, out: Option<&Path>) -> anyhow::Result<()> {
    if repeats == 0 {
        return Err(usage("--repeats must be at least 1"));
    }
    let manifest = load_manifest(manifest_path)?;
    if manifest.is_empty() {
        return Err(usage("benchmark manifest is empty"));
    }
    let estimator = ctx.cfg.estimator()?;
    let mut walls = Vec::with_capacity(repeats);
    for round in 0..repeats {
        let start = Instant::now();
        run_pool(
            ctx,
            manifest.entries.iter().collect(),
            |i| format!("entry {:?}", manifest.entries[i].id),
            |_, e| {
                estimator.estimate(&load_image(e)?)?;
                Ok(())
            },
        )?;
        let wall = start.elapsed().as_secs_f64();
        log::info!("round {}: {wall:.4} s", round + 1);
        walls.push(wall);
    }
    let report = BenchmarkReport::new(estimator.name(), manifest.len(), ctx.cfg.workers, walls);
    if let Some(path) = out {
        let outputs = Outputs::new();
        outputs.write(path, (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
        outputs.commit();
    }
    print!("{}", report.render());
    Ok(())
}
