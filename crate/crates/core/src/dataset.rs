//! Sample manifests, train/val/test splitting and Cityscapes label conversion.
//!
//! A manifest is a UTF-8 CSV with the header
//! `id,city,image_path,label_mask_path,true_gvi,lat,lon,heading,pitch,point_id,split`.
//! Optional fields are left empty when absent.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::AtomicBool;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gvi::{gvi_of_mask, GviError};
use crate::imaging::{self, CameraPose, ImagingError, LatLon};
use crate::pipeline::{map_ordered, PipelineError};

pub const MANIFEST_HEADER: [&str; 11] = [
    "id",
    "city",
    "image_path",
    "label_mask_path",
    "true_gvi",
    "lat",
    "lon",
    "heading",
    "pitch",
    "point_id",
    "split",
];

/// Cityscapes `labelIds` value of the `vegetation` class.
pub const CITYSCAPES_VEGETATION_ID: u8 = 21;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("manifest header lacks column {0:?}")]
    MissingColumn(String),
    #[error("split sizes sum to {requested} but the manifest has {available} entries")]
    SizeMismatch { requested: usize, available: usize },
    #[error("entry {0:?} is already assigned to a split")]
    AlreadySplit(String),
    #[error("label {label} has no matching image {expected}")]
    OrphanLabel { label: PathBuf, expected: PathBuf },
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read CSV {path}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Gvi(#[from] GviError),
    #[error("cancelled")]
    Cancelled,
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub city: String,
    pub image_path: PathBuf,
    pub label_mask_path: Option<PathBuf>,
    pub true_gvi: Option<f64>,
    pub location: Option<LatLon>,
    pub pose: Option<CameraPose>,
    pub point_id: Option<String>,
    pub split: Option<Split>,
}

impl ManifestEntry {
    pub fn new(id: impl Into<String>, city: impl Into<String>, image_path: impl Into<PathBuf>) -> Self {
        Self {
            id: id.into(),
            city: city.into(),
            image_path: image_path.into(),
            label_mask_path: None,
            true_gvi: None,
            location: None,
            pose: None,
            point_id: None,
            split: None,
        }
    }

    /// Grouping key for point-level aggregation; an entry without a point id
    /// forms its own point.
    pub fn point_key(&self) -> &str {
        self.point_id.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleManifest {
    pub entries: Vec<ManifestEntry>,
}

impl SampleManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(DatasetError::DuplicateId(e.id.clone()));
            }
            if let Some(g) = e.true_gvi {
                if !(0.0..=100.0).contains(&g) {
                    return Err(DatasetError::MalformedRow {
                        row: 0,
                        reason: format!("true_gvi {g} of {:?} outside [0, 100]", e.id),
                    });
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sort_by_id(&mut self) {
        self.entries.sort_by(|a, b| a.id.cmp(&b.id));
    }

    /// Rewrites relative image and label paths as `base/<path>`.
    pub fn resolve_relative(&mut self, base: &Path) {
        for e in &mut self.entries {
            if e.image_path.is_relative() {
                e.image_path = base.join(&e.image_path);
            }
            if let Some(p) = e.label_mask_path.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        }
    }

    pub fn filter_split(&self, split: Split) -> SampleManifest {
        SampleManifest {
            entries: self
                .entries
                .iter()
                .filter(|e| e.split == Some(split))
                .cloned()
                .collect(),
        }
    }
}

fn opt_str(s: &str) -> Option<&str> {
    if s.is_empty() {
        None
    } else {
        Some(s)
    }
}

fn parse_f64(row: usize, name: &str, s: &str) -> Result<Option<f64>> {
    match opt_str(s) {
        None => Ok(None),
        Some(v) => v
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .map(Some)
            .ok_or_else(|| DatasetError::MalformedRow {
                row,
                reason: format!("{name} {v:?} is not a number"),
            }),
    }
}

fn fmt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_path(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<SampleManifest> {
    let path = path.as_ref();
    let csv_err = |source| DatasetError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let mut col = BTreeMap::new();
    for name in MANIFEST_HEADER {
        let idx = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))?;
        col.insert(name, idx);
    }

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        // 1-based data row, header excluded
        let row = i + 1;
        let record = record.map_err(|e| DatasetError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        let field = |name: &str| record.get(col[name]).unwrap_or("").trim();
        let malformed = |reason: String| DatasetError::MalformedRow { row, reason };

        let id = field("id").to_string();
        if id.is_empty() {
            return Err(malformed("empty id".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId(id));
        }
        let image_path = field("image_path");
        if image_path.is_empty() {
            return Err(malformed("empty image_path".into()));
        }
        let true_gvi = parse_f64(row, "true_gvi", field("true_gvi"))?;
        if let Some(g) = true_gvi {
            if !(0.0..=100.0).contains(&g) {
                return Err(malformed(format!("true_gvi {g} outside [0, 100]")));
            }
        }
        let location = match (
            parse_f64(row, "lat", field("lat"))?,
            parse_f64(row, "lon", field("lon"))?,
        ) {
            (None, None) => None,
            (Some(lat), Some(lon)) => {
                let ll = LatLon::new(lat, lon);
                if !ll.is_valid() {
                    return Err(malformed(format!("coordinates ({lat}, {lon}) out of range")));
                }
                Some(ll)
            }
            _ => return Err(malformed("lat and lon must be given together".into())),
        };
        let pose = match (
            parse_f64(row, "heading", field("heading"))?,
            parse_f64(row, "pitch", field("pitch"))?,
        ) {
            (None, None) => None,
            (Some(heading), pitch) => {
                if !(0.0..360.0).contains(&heading) {
                    return Err(malformed(format!("heading {heading} outside [0, 360)")));
                }
                Some(CameraPose {
                    heading,
                    pitch: pitch.unwrap_or(0.0),
                })
            }
            (None, Some(_)) => return Err(malformed("pitch given without heading".into())),
        };
        let split = opt_str(field("split"))
            .map(str::parse::<Split>)
            .transpose()
            .map_err(malformed)?;

        entries.push(ManifestEntry {
            id,
            city: field("city").to_string(),
            image_path: PathBuf::from(image_path),
            label_mask_path: opt_str(field("label_mask_path")).map(PathBuf::from),
            true_gvi,
            location,
            pose,
            point_id: opt_str(field("point_id")).map(str::to_string),
            split,
        });
    }
    Ok(SampleManifest { entries })
}

/// Manifest as CSV bytes, header first.
pub fn manifest_to_csv(manifest: &SampleManifest) -> Vec<u8> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let ok = "writing CSV into memory cannot fail";
    writer.write_record(MANIFEST_HEADER).expect(ok);
    for e in &manifest.entries {
        writer
            .write_record([
                e.id.clone(),
                e.city.clone(),
                fmt_path(&e.image_path),
                e.label_mask_path.as_deref().map(fmt_path).unwrap_or_default(),
                fmt_f64(e.true_gvi),
                fmt_f64(e.location.map(|l| l.lat)),
                fmt_f64(e.location.map(|l| l.lon)),
                fmt_f64(e.pose.map(|p| p.heading)),
                fmt_f64(e.pose.map(|p| p.pitch)),
                e.point_id.clone().unwrap_or_default(),
                e.split.map(|s| s.as_str().to_string()).unwrap_or_default(),
            ])
            .expect(ok);
    }
    writer.into_inner().expect(ok)
}

pub fn save_manifest(manifest: &SampleManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest_to_csv(manifest)).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Requested split sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn new(train: usize, val: usize, test: usize) -> Self {
        Self { train, val, test }
    }

    fn as_array(self) -> [usize; 3] {
        [self.train, self.val, self.test]
    }

    pub fn total(self) -> usize {
        self.train + self.val + self.test
    }
}

/// Apportions `group_sizes` into splits with column totals `sizes`, each
/// group as close to proportional as integer counts allow (largest
/// remainder per split, capped by what the group has left).
pub fn stratified_quotas(group_sizes: &[usize], sizes: SplitSizes) -> Vec<[usize; 3]> {
    let total: usize = group_sizes.iter().sum();
    let mut quotas = vec![[0usize; 3]; group_sizes.len()];
    let mut remaining: Vec<usize> = group_sizes.to_vec();
    let targets = sizes.as_array();
    for s in 0..2 {
        let target = targets[s];
        let mut assigned = 0;
        let mut fractions = Vec::with_capacity(group_sizes.len());
        for (g, &n) in group_sizes.iter().enumerate() {
            let exact = (n * target) as f64 / total.max(1) as f64;
            let base = ((n * target) / total.max(1)).min(remaining[g]);
            quotas[g][s] = base;
            remaining[g] -= base;
            assigned += base;
            fractions.push((exact - base as f64, g));
        }
        // larger fractional part first, ties to the lower group index
        fractions.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        while assigned < target {
            let before = assigned;
            for &(_, g) in &fractions {
                if assigned == target {
                    break;
                }
                if remaining[g] > 0 {
                    quotas[g][s] += 1;
                    remaining[g] -= 1;
                    assigned += 1;
                }
            }
            assert!(assigned > before, "split sizes exceed available entries");
        }
    }
    for (g, q) in quotas.iter_mut().enumerate() {
        q[2] = remaining[g];
    }
    quotas
}

/// Assigns every entry to train/val/test. With `stratify_by_city` each city
/// is apportioned proportionally; entries are shuffled within their city by
/// a ChaCha8 stream seeded with `seed`.
pub fn split_dataset(
    manifest: &SampleManifest,
    sizes: SplitSizes,
    seed: u64,
    stratify_by_city: bool,
) -> Result<SampleManifest> {
    if sizes.total() != manifest.len() {
        return Err(DatasetError::SizeMismatch {
            requested: sizes.total(),
            available: manifest.len(),
        });
    }
    if let Some(e) = manifest.entries.iter().find(|e| e.split.is_some()) {
        return Err(DatasetError::AlreadySplit(e.id.clone()));
    }

    let mut groups: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in &manifest.entries {
        let key = if stratify_by_city { e.city.as_str() } else { "" };
        groups.entry(key).or_default().push(e);
    }
    let group_sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let quotas = stratified_quotas(&group_sizes, sizes);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(manifest.len());
    for (members, quota) in groups.into_values().zip(quotas) {
        let mut members = members;
        members.sort_by(|a, b| a.id.cmp(&b.id));
        members.shuffle(&mut rng);
        let mut it = members.into_iter();
        for (split, count) in Split::ALL.into_iter().zip(quota) {
            for e in it.by_ref().take(count) {
                let mut e = e.clone();
                e.split = Some(split);
                out.push(e);
            }
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(SampleManifest { entries: out })
}

struct CityscapesPair {
    city: String,
    name: String,
    label: PathBuf,
    image: PathBuf,
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let io = |source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths = fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(io)?;
    paths.sort();
    Ok(paths)
}

fn find_cityscapes_pairs(labels_dir: &Path, images_dir: &Path) -> Result<Vec<CityscapesPair>> {
    const LABEL_SUFFIX: &str = "_labelIds.png";
    const IMAGE_SUFFIX: &str = "_leftImg8bit.png";
    const ANNOTATION_TAGS: [&str; 2] = ["_gtFine", "_gtCoarse"];
    let mut pairs = Vec::new();
    for city_dir in read_dir_sorted(labels_dir)? {
        if !city_dir.is_dir() {
            continue;
        }
        let city = city_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for label in read_dir_sorted(&city_dir)? {
            let file = label
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let Some(name) = file.strip_suffix(LABEL_SUFFIX) else {
                continue;
            };
            let name = ANNOTATION_TAGS
                .iter()
                .find_map(|tag| name.strip_suffix(tag))
                .unwrap_or(name);
            let image = images_dir.join(&city).join(format!("{name}{IMAGE_SUFFIX}"));
            if !image.is_file() {
                return Err(DatasetError::OrphanLabel {
                    label,
                    expected: image,
                });
            }
            pairs.push(CityscapesPair {
                city: city.clone(),
                name: name.to_string(),
                label,
                image,
            });
        }
    }
    Ok(pairs)
}

/// Converts `<labels_dir>/<city>/<name>[_gtFine]_labelIds.png` rasters into
/// binary vegetation masks at `<out_dir>/<name>.png` and returns a manifest
/// row per label, sorted by id, with `true_gvi` taken from the written mask.
/// Images are expected at `<images_dir>/<city>/<name>_leftImg8bit.png`.
pub fn convert_cityscapes(
    labels_dir: impl AsRef<Path>,
    images_dir: impl AsRef<Path>,
    vegetation_label_id: u8,
    out_dir: impl AsRef<Path>,
    workers: usize,
    cancel: &AtomicBool,
) -> Result<SampleManifest> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|source| DatasetError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let pairs = find_cityscapes_pairs(labels_dir.as_ref(), images_dir.as_ref())?;
    let entries = map_ordered(pairs, workers, cancel, |_, pair| -> Result<ManifestEntry> {
        let label = imaging::decode_label_image(&pair.label)?;
        let mask = imaging::mask_from_label_image(&label, vegetation_label_id)?;
        let gvi = gvi_of_mask(&mask)?;
        let mask_path = out_dir.join(format!("{}.png", pair.name));
        imaging::mask_to_png(&mask, &mask_path)?;
        let mut entry = ManifestEntry::new(pair.name, pair.city, pair.image);
        entry.label_mask_path = Some(mask_path);
        entry.true_gvi = Some(gvi.value);
        Ok(entry)
    })
    .map_err(|e| match e {
        PipelineError::Cancelled => DatasetError::Cancelled,
        PipelineError::Item { error, .. } => error,
    })?;
    let mut manifest = SampleManifest::new(entries)?;
    manifest.sort_by_id();
    Ok(manifest)
}
