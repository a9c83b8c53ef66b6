//! Deterministic synthetic street scenes with exact vegetation masks.
//!
//! Each scene has a sky band, building facades, a road, a few tree canopies
//! (the labelled vegetation) and a sprinkle of small green specks that are
//! not labelled. Canopies carry shaded pixels so the threshold segmenter
//! neither matches the labels exactly nor misses them entirely.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{self, DatasetError, ManifestEntry, SampleManifest};
use crate::gvi::gvi_of_mask;
use crate::imaging::{mask_to_png, CameraPose, ImagingError, LatLon, RasterImage, VegetationMask};

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub image: RasterImage,
    pub truth: VegetationMask,
}

struct Canopy {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

/// Renders scene `seed` at `width`×`height`.
pub fn scene(id: impl Into<String>, width: u32, height: u32, seed: u64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let horizon = h * rng.random_range(0.35..0.5);
    let road_top = h * rng.random_range(0.7..0.8);

    let n_trees = rng.random_range(0..=4);
    let canopies: Vec<Canopy> = (0..n_trees)
        .map(|_| Canopy {
            cx: rng.random_range(0.0..w),
            cy: rng.random_range(h * 0.15..h * 0.6),
            rx: rng.random_range(w * 0.05..w * 0.25),
            ry: rng.random_range(h * 0.05..h * 0.22),
        })
        .collect();
    let facade = [
        rng.random_range(120..200u8),
        rng.random_range(100..180u8),
        rng.random_range(90..170u8),
    ];
    let shade = rng.random_range(0.05..0.3);
    let specks: Vec<(u32, u32, u32)> = (0..rng.random_range(0..12))
        .map(|_| {
            (
                rng.random_range(0..width),
                rng.random_range(0..height),
                rng.random_range(1..6),
            )
        })
        .collect();

    let truth = VegetationMask::from_fn(width, height, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        canopies.iter().any(|c| {
            let dx = (px - c.cx) / c.rx;
            let dy = (py - c.cy) / c.ry;
            dx * dx + dy * dy <= 1.0
        })
    });
    let trunks: Vec<(f64, f64, f64)> = canopies
        .iter()
        .map(|c| (c.cx, c.cy + c.ry * 0.8, (c.rx * 0.12).max(1.0)))
        .collect();

    let mut pixel_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let image = RasterImage::from_fn(id, width, height, |x, y| {
        let noise = |rng: &mut ChaCha8Rng, base: u8, spread: i16| -> u8 {
            (base as i16 + rng.random_range(-spread..=spread)).clamp(0, 255) as u8
        };
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        if truth.get(x, y) {
            if pixel_rng.random_bool(shade) {
                // shaded leaves: too dark to clear the green margins
                let g = noise(&mut pixel_rng, 45, 6);
                return [g.saturating_sub(4), g, g.saturating_sub(2)];
            }
            return [
                noise(&mut pixel_rng, 60, 20),
                noise(&mut pixel_rng, 140, 30),
                noise(&mut pixel_rng, 50, 20),
            ];
        }
        if trunks
            .iter()
            .any(|&(tx, ty, tw)| (px - tx).abs() <= tw && py >= ty && py < road_top)
        {
            return [noise(&mut pixel_rng, 90, 8), noise(&mut pixel_rng, 70, 8), noise(&mut pixel_rng, 50, 8)];
        }
        if specks
            .iter()
            .any(|&(sx, sy, r)| x.abs_diff(sx) <= r && y.abs_diff(sy) <= r)
        {
            return [40, 170, 40];
        }
        if py < horizon {
            [noise(&mut pixel_rng, 150, 10), noise(&mut pixel_rng, 185, 10), noise(&mut pixel_rng, 235, 10)]
        } else if py < road_top {
            facade.map(|c| noise(&mut pixel_rng, c, 12))
        } else {
            let g = noise(&mut pixel_rng, 95, 10);
            [g, g, g]
        }
    })
    .expect("dimensions are consistent");

    SyntheticScene { image, truth }
}

#[derive(Debug, Clone)]
pub struct DatasetOptions {
    pub n_images: usize,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub cities: Vec<String>,
    /// Images per sample point; consecutive images share a point and get
    /// evenly spaced headings.
    pub images_per_point: usize,
}

impl DatasetOptions {
    pub fn new(n_images: usize, seed: u64) -> Self {
        Self {
            n_images,
            width: 96,
            height: 64,
            seed,
            cities: vec!["alpha".into(), "beta".into()],
            images_per_point: 6,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes images (`images/`), label masks (`labels/`) and `manifest.csv`
/// under `dir`. The CSV stores paths relative to `dir`; the returned
/// manifest has them joined onto `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, opts: &DatasetOptions) -> Result<SampleManifest, DatasetError> {
    let dir = dir.as_ref();
    let images = dir.join("images");
    let labels = dir.join("labels");
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    fs::create_dir_all(&labels).map_err(io_err(&labels))?;

    let per_point = opts.images_per_point.max(1);
    let mut entries = Vec::with_capacity(opts.n_images);
    for i in 0..opts.n_images {
        let id = format!("img{i:05}");
        let s = scene(id.clone(), opts.width, opts.height, opts.seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
        let image_rel = PathBuf::from("images").join(format!("{id}.png"));
        let label_rel = PathBuf::from("labels").join(format!("{id}.png"));
        let (image_path, label_path) = (dir.join(&image_rel), dir.join(&label_rel));
        s.image
            .to_rgb_image()
            .save(&image_path)
            .map_err(|e| ImagingError::CorruptImage {
                path: image_path.clone(),
                reason: e.to_string(),
            })?;
        mask_to_png(&s.truth, &label_path)?;

        let point = i / per_point;
        let city = if opts.cities.is_empty() {
            "synthetic".to_string()
        } else {
            opts.cities[point % opts.cities.len()].clone()
        };
        let mut entry = ManifestEntry::new(id, city, image_rel);
        entry.label_mask_path = Some(label_rel);
        entry.true_gvi = Some(gvi_of_mask(&s.truth)?.value);
        entry.location = Some(LatLon::new(1.3 + point as f64 * 1e-4, 103.8));
        entry.pose = Some(CameraPose {
            heading: (i % per_point) as f64 * 360.0 / per_point as f64,
            pitch: 0.0,
        });
        entry.point_id = Some(format!("p{point:04}"));
        entries.push(entry);
    }
    let mut manifest = SampleManifest::new(entries)?;
    dataset::save_manifest(&manifest, manifest_path(dir))?;
    manifest.resolve_relative(dir);
    Ok(manifest)
}

pub fn manifest_path(dir: impl AsRef<Path>) -> PathBuf {
    dir.as_ref().join("manifest.csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::{segment, BaselineConfig};
    use crate::metrics::iou;

    #[test]
    fn scenes_are_deterministic() {
        let a = scene("a", 64, 48, 7);
        let b = scene("a", 64, 48, 7);
        assert_eq!(a.image, b.image);
        assert_eq!(a.truth, b.truth);
        assert_ne!(a.image, scene("a", 64, 48, 8).image);
    }

    #[test]
    fn baseline_is_informative_but_imperfect() {
        let cfg = BaselineConfig::default();
        let mut total = 0.0;
        let mut n = 0;
        for seed in 0..40 {
            let s = scene("s", 96, 64, seed);
            if s.truth.vegetation_pixel_count() == 0 {
                continue;
            }
            total += iou(&segment(&s.image, &cfg), &s.truth).unwrap();
            n += 1;
        }
        let mean = total / n as f64;
        assert!(mean > 0.4 && mean < 0.99, "mean IoU {mean}");
    }

    #[test]
    fn dataset_round_trips_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(dir.path(), &DatasetOptions::new(13, 1)).unwrap();
        let mut loaded = dataset::load_manifest(manifest_path(dir.path())).unwrap();
        assert_eq!(loaded.entries[0].image_path, Path::new("images/img00000.png"));
        loaded.resolve_relative(dir.path());
        assert_eq!(loaded, m);
        assert_eq!(loaded.len(), 13);
        assert_eq!(loaded.entries[7].point_id.as_deref(), Some("p0001"));
        assert_eq!(loaded.entries[7].pose.unwrap().heading, 60.0);
        assert_eq!(m.entries[0].true_gvi, loaded.entries[0].true_gvi);
        let truth = crate::imaging::mask_from_png(loaded.entries[3].label_mask_path.as_ref().unwrap()).unwrap();
        assert_eq!(gvi_of_mask(&truth).unwrap().value, loaded.entries[3].true_gvi.unwrap());
    }
}
