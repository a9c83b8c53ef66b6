use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{anyhow, bail, Context as _};
use greenview::dataset::{self, ManifestEntry, SampleManifest, Split, SplitSizes};
use greenview::geo::{self, GviFeature, ImageryClient, ImageryClientConfig, SamplePoint, SamplingOptions, StreetNetwork};
use greenview::gvi::{aggregate, aggregate_pooled};
use greenview::imaging::{decode_image, encode_mask_png, encode_png, mask_from_png};
use greenview::inference::EstimateResult;
use greenview::metrics::{evaluate as score, render_table, EvalOptions, IouMode, Timing};
use greenview::pipeline::{map_ordered, PipelineError};
use greenview::synth;
use greenview::{Estimator, EstimatorKind, GviMeasurement, LatLon, PairedSample, RasterImage, Scope, Source};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::output::Outputs;
use crate::{usage, Cancelled};

pub struct Context<'a> {
    pub cfg: PipelineConfig,
    pub cancel: &'a AtomicBool,
}

pub fn load_manifest(path: &Path) -> anyhow::Result<SampleManifest> {
    let mut m = dataset::load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))?;
    m.resolve_relative(path.parent().unwrap_or(Path::new(".")));
    Ok(m)
}

pub fn load_image(entry: &ManifestEntry) -> anyhow::Result<RasterImage> {
    let mut img = decode_image(&entry.image_path)?.with_city(entry.city.clone());
    img.set_id(entry.id.clone());
    if let Some(loc) = entry.location {
        img = img.with_location(loc);
    }
    if let Some(pose) = entry.pose {
        img = img.with_pose(pose);
    }
    Ok(img)
}

/// Maps `f` over `items` on the configured pool, attributing failures to
/// `label(index)`.
pub fn run_pool<T, R, F>(
    ctx: &Context,
    items: Vec<T>,
    label: impl Fn(usize) -> String,
    f: F,
) -> anyhow::Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(usize, T) -> anyhow::Result<R> + Sync,
{
    map_ordered(items, ctx.cfg.workers, ctx.cancel, f).map_err(|e| match e {
        PipelineError::Cancelled => anyhow!(Cancelled),
        PipelineError::Item { index, error } => error.context(label(index)),
    })
}

pub fn estimate_all(
    ctx: &Context,
    manifest: &SampleManifest,
    estimator: &Estimator,
) -> anyhow::Result<Vec<EstimateResult>> {
    run_pool(
        ctx,
        manifest.entries.iter().collect(),
        |i| format!("entry {:?}", manifest.entries[i].id),
        |_, e| Ok(estimator.estimate(&load_image(e)?)?),
    )
}

fn csv_bytes<S: Serialize>(rows: impl IntoIterator<Item = S>) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| anyhow!("{e}"))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{} row {}", path.display(), i + 1)))
        .collect()
}

pub fn segment(ctx: &Context, manifest_path: &Path, out_dir: &Path) -> anyhow::Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let estimator = ctx.cfg.estimator()?;
    if !estimator.produces_mask() {
        return Err(usage(format!("{} produces no masks", estimator.name())));
    }
    let outputs = Outputs::new();
    let mut per_city: HashMap<&str, (usize, usize)> = HashMap::new();
    for e in &manifest.entries {
        per_city.entry(e.city.as_str()).or_default().1 += 1;
    }
    let progress = Mutex::new(per_city);

    run_pool(
        ctx,
        manifest.entries.iter().collect(),
        |i| format!("entry {:?}", manifest.entries[i].id),
        |_, e| {
            let result = estimator.estimate(&load_image(e)?)?;
            let mask = result.mask.expect("mask-producing estimator");
            outputs.write(&out_dir.join(format!("{}.png", e.id)), &encode_mask_png(&mask))?;
            let mut progress = progress.lock().expect("progress poisoned");
            let (done, total) = progress.get_mut(e.city.as_str()).expect("city counted");
            *done += 1;
            if done == total {
                log::info!("{}: segmented {total} image(s)", e.city);
            }
            Ok(())
        },
    )?;
    outputs.commit();

    let progress = progress.into_inner().expect("progress poisoned");
    let mut cities: Vec<_> = progress.into_iter().collect();
    cities.sort();
    for (city, (done, _)) in cities {
        println!("{city}\t{done}");
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageRow {
    id: String,
    point_id: String,
    city: String,
    gvi: f64,
    source: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PointRow {
    pub point_id: String,
    pub city: String,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub gvi: f64,
    pub n_images: usize,
    pub source: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CityRow {
    city: String,
    gvi: f64,
    n_points: usize,
    n_images: usize,
    source: String,
}

/// `<dir>/<stem><suffix>.csv` next to `path`.
pub fn companion(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.csv"))
}

pub fn gvi(ctx: &Context, manifest_path: &Path, out: &Path, pool_pixels: bool) -> anyhow::Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let estimator = ctx.cfg.estimator()?;
    if pool_pixels && !estimator.produces_mask() {
        return Err(usage("--pool-pixels needs a mask-producing backend"));
    }
    let results = estimate_all(ctx, &manifest, &estimator)?;
    let combine = |ms: &[GviMeasurement], scope| {
        if pool_pixels {
            aggregate_pooled(ms, scope)
        } else {
            aggregate(ms, scope)
        }
    };

    let mut image_rows = Vec::with_capacity(results.len());
    let mut by_point: BTreeMap<&str, Vec<(&ManifestEntry, GviMeasurement)>> = BTreeMap::new();
    for (e, r) in manifest.entries.iter().zip(&results) {
        let m = r.gvi.clone().with_id(e.id.clone());
        image_rows.push(ImageRow {
            id: e.id.clone(),
            point_id: e.point_key().to_string(),
            city: e.city.clone(),
            gvi: m.value,
            source: m.source.as_str().to_string(),
        });
        by_point.entry(e.point_key()).or_default().push((e, m));
    }

    let mut point_rows = Vec::with_capacity(by_point.len());
    let mut by_city: BTreeMap<&str, Vec<GviMeasurement>> = BTreeMap::new();
    for (point_id, members) in &by_point {
        let city = members[0].0.city.as_str();
        if members.iter().any(|(e, _)| e.city != city) {
            log::warn!("point {point_id} spans several cities; counting it under {city}");
        }
        let ms: Vec<GviMeasurement> = members.iter().map(|(_, m)| m.clone()).collect();
        let p = combine(&ms, Scope::Point)?.with_id(*point_id);
        let location = members.iter().find_map(|(e, _)| e.location);
        point_rows.push(PointRow {
            point_id: point_id.to_string(),
            city: city.to_string(),
            lat: location.map(|l| l.lat),
            lon: location.map(|l| l.lon),
            gvi: p.value,
            n_images: p.n_images,
            source: p.source.as_str().to_string(),
        });
        by_city.entry(city).or_default().push(p);
    }

    let mut city_rows = Vec::with_capacity(by_city.len());
    for (city, points) in &by_city {
        let c = combine(points, Scope::City)?;
        city_rows.push(CityRow {
            city: city.to_string(),
            gvi: c.value,
            n_points: points.len(),
            n_images: c.n_images,
            source: c.source.as_str().to_string(),
        });
    }

    let outputs = Outputs::new();
    outputs.write(out, &csv_bytes(&image_rows)?)?;
    outputs.write(&companion(out, "_points"), &csv_bytes(&point_rows)?)?;
    outputs.write(&companion(out, "_cities"), &csv_bytes(&city_rows)?)?;
    outputs.commit();
    for row in &city_rows {
        println!("{}\t{}", row.city, row.gvi);
    }
    Ok(())
}

pub struct EvaluateArgs {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub table: PathBuf,
    pub split: Option<Split>,
    pub pooled_iou: bool,
    pub with_timing: bool,
    pub name: Option<String>,
}

pub fn default_row_name(kind: EstimatorKind) -> &'static str {
    match kind {
        EstimatorKind::Baseline => "Threshold and cluster",
        EstimatorKind::MaskBackend => "Semantic segmentation",
        EstimatorKind::DirectEstimate => "End-to-end",
    }
}

pub fn evaluate(ctx: &Context, args: &EvaluateArgs) -> anyhow::Result<()> {
    let mut manifest = load_manifest(&args.manifest)?;
    if let Some(split) = args.split {
        manifest = manifest.filter_split(split);
    }
    if manifest.is_empty() {
        bail!("no manifest entries to evaluate");
    }
    if let Some(e) = manifest.entries.iter().find(|e| e.true_gvi.is_none()) {
        bail!("entry {:?} has no true_gvi", e.id);
    }
    let estimator = ctx.cfg.estimator()?;
    let want_iou = estimator.produces_mask();
    if want_iou && manifest.entries.iter().any(|e| e.label_mask_path.is_none()) {
        log::warn!("some entries lack label masks; mean IoU omitted");
    }

    let start = Instant::now();
    let samples: Vec<PairedSample> = run_pool(
        ctx,
        manifest.entries.iter().collect(),
        |i| format!("entry {:?}", manifest.entries[i].id),
        |_, e| {
            let r = estimator.estimate(&load_image(e)?)?;
            let sample = PairedSample::new(e.id.clone(), r.gvi.value, e.true_gvi.expect("checked above"));
            Ok(match (r.mask, &e.label_mask_path) {
                (Some(pred), Some(label)) if want_iou => sample.with_masks(pred, mask_from_png(label)?),
                _ => sample,
            })
        },
    )?;
    let elapsed = start.elapsed().as_secs_f64();

    let options = EvalOptions {
        quantiles: ctx.cfg.quantiles,
        iou_mode: if args.pooled_iou { IouMode::Pooled } else { IouMode::PerImage },
        split: args.split.map(|s| s.as_str().to_string()),
    };
    let timing = args.with_timing.then_some(Timing {
        total_seconds: elapsed,
        images: samples.len(),
    });
    let report = score(&samples, timing, &options)?;
    let name = args.name.as_deref().unwrap_or(default_row_name(estimator.kind()));
    let table = render_table(&[(name, &report)]);

    let outputs = Outputs::new();
    outputs.write(&args.out, report.to_json().as_bytes())?;
    outputs.write(&args.table, table.as_bytes())?;
    outputs.commit();
    print!("{table}");
    Ok(())
}

pub fn convert_cityscapes(
    ctx: &Context,
    labels: &Path,
    images: &Path,
    out: &Path,
    manifest_path: &Path,
    vegetation_id: u8,
) -> anyhow::Result<()> {
    let manifest = match dataset::convert_cityscapes(labels, images, vegetation_id, out, ctx.cfg.workers, ctx.cancel) {
        Err(dataset::DatasetError::Cancelled) => return Err(anyhow!(Cancelled)),
        other => other?,
    };
    let outputs = Outputs::new();
    for e in &manifest.entries {
        if let Some(p) = &e.label_mask_path {
            outputs.track(p);
        }
    }
    write_manifest(&outputs, &manifest, manifest_path)?;
    outputs.commit();
    println!("converted {} label image(s)", manifest.len());
    Ok(())
}

fn write_manifest(outputs: &Outputs, manifest: &SampleManifest, path: &Path) -> anyhow::Result<()> {
    outputs.write(path, &dataset::manifest_to_csv(manifest))
}

pub fn split(
    ctx: &Context,
    manifest_path: &Path,
    out: &Path,
    [train, val, test]: [usize; 3],
    stratify: bool,
) -> anyhow::Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let sizes = SplitSizes::new(train, val, test);
    let split = dataset::split_dataset(&manifest, sizes, ctx.cfg.seed, stratify).map_err(|e| match e {
        dataset::DatasetError::SizeMismatch { .. } => usage(e.to_string()),
        other => other.into(),
    })?;
    let outputs = Outputs::new();
    write_manifest(&outputs, &split, out)?;
    outputs.commit();
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SamplePointRow {
    point_id: String,
    segment_id: String,
    lat: f64,
    lon: f64,
    arc_m: f64,
    /// Semicolon-separated degrees.
    headings: String,
}

pub fn sample_points(
    ctx: &Context,
    network_path: &Path,
    out: &Path,
    interval: f64,
    subsample: Option<usize>,
    headings: Option<Vec<f64>>,
    jitter: f64,
) -> anyhow::Result<()> {
    let network = StreetNetwork::load(network_path)?;
    let mut opts = SamplingOptions::new(interval);
    opts.seed = ctx.cfg.seed;
    opts.jitter_m = jitter;
    if let Some(h) = headings {
        opts.headings = h;
    }
    let mut points = geo::sample_points_with(&network, &opts).map_err(|e| match e {
        geo::GeoError::InvalidInterval(_) | geo::GeoError::InvalidHeading(_) => usage(e.to_string()),
        other => other.into(),
    })?;
    if let Some(k) = subsample {
        points = geo::random_subsample(&points, k, ctx.cfg.seed)?;
    }
    let rows = points.iter().map(|p| SamplePointRow {
        point_id: p.point_id.clone(),
        segment_id: p.segment_id.clone(),
        lat: p.location.lat,
        lon: p.location.lon,
        arc_m: p.arc_m,
        headings: p
            .requested_headings
            .iter()
            .map(|h| h.to_string())
            .collect::<Vec<_>>()
            .join(";"),
    });
    let outputs = Outputs::new();
    outputs.write(out, &csv_bytes(rows)?)?;
    outputs.commit();
    println!("{} point(s) on {} segment(s)", points.len(), network.segments.len());
    Ok(())
}

fn read_sample_points(path: &Path) -> anyhow::Result<Vec<SamplePoint>> {
    read_csv::<SamplePointRow>(path)?
        .into_iter()
        .map(|r| {
            let requested_headings = r
                .headings
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("headings of point {}", r.point_id))?;
            Ok(SamplePoint {
                point_id: r.point_id,
                location: LatLon::new(r.lat, r.lon),
                segment_id: r.segment_id,
                requested_headings,
                arc_m: r.arc_m,
            })
        })
        .collect()
}

pub fn fetch_imagery(
    ctx: &Context,
    points_path: &Path,
    out: &Path,
    endpoint: Option<String>,
    city: &str,
) -> anyhow::Result<()> {
    let points = read_sample_points(points_path)?;
    let endpoint = endpoint
        .or_else(|| ctx.cfg.imagery.endpoint.clone())
        .ok_or_else(|| usage("no imagery endpoint; pass --endpoint or set imagery.endpoint"))?;
    let mut config = ImageryClientConfig::from_env(endpoint, &ctx.cfg.cache_dir).map_err(|e| usage(e.to_string()))?;
    config.requests_per_second = ctx.cfg.imagery.requests_per_second;
    config.image_size = ctx.cfg.imagery.image_size;
    config.pitch = ctx.cfg.imagery.pitch;
    let client = ImageryClient::new(config);

    let fetched = match client.fetch_many(&points, ctx.cfg.workers, ctx.cancel) {
        Err(geo::GeoError::Cancelled) => return Err(anyhow!(Cancelled)),
        other => other?,
    };
    let outputs = Outputs::new();
    let mut entries = Vec::new();
    for (point, images) in points.iter().zip(&fetched) {
        for img in images {
            let path = out.join("images").join(format!("{}.png", img.id()));
            outputs.write(&path, &encode_png(img))?;
            let mut e = ManifestEntry::new(img.id(), city, PathBuf::from("images").join(format!("{}.png", img.id())));
            e.location = Some(point.location);
            e.pose = img.pose;
            e.point_id = Some(point.point_id.clone());
            entries.push(e);
        }
    }
    let manifest = SampleManifest::new(entries)?;
    write_manifest(&outputs, &manifest, &out.join("manifest.csv"))?;
    outputs.commit();
    let empty = fetched.iter().filter(|f| f.is_empty()).count();
    println!(
        "{} image(s) for {} point(s); {empty} point(s) without imagery; {} network call(s)",
        manifest.len(),
        points.len(),
        client.network_calls()
    );
    Ok(())
}

pub fn export_geojson(points_csv: &Path, out: &Path) -> anyhow::Result<()> {
    let rows: Vec<PointRow> = read_csv(points_csv)?;
    let features = rows
        .into_iter()
        .map(|r| {
            let (Some(lat), Some(lon)) = (r.lat, r.lon) else {
                bail!("point {} has no coordinates", r.point_id);
            };
            Ok(GviFeature {
                location: LatLon::new(lat, lon),
                gvi: r.gvi,
                n_images: r.n_images,
                source: r.source.parse::<Source>().map_err(|e| anyhow!(e))?,
                point_id: r.point_id,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let text = serde_json::to_string_pretty(&geo::to_geojson(&features))? + "\n";
    let outputs = Outputs::new();
    outputs.write(out, text.as_bytes())?;
    outputs.commit();
    Ok(())
}

pub fn synthesize(
    ctx: &Context,
    out: &Path,
    n: usize,
    width: u32,
    height: u32,
    cities: Vec<String>,
) -> anyhow::Result<()> {
    if width == 0 || height == 0 {
        return Err(usage("width and height must be positive"));
    }
    let opts = synth::DatasetOptions {
        n_images: n,
        width,
        height,
        seed: ctx.cfg.seed,
        cities,
        images_per_point: 6,
    };
    let manifest = synth::write_dataset(out, &opts)?;
    println!("wrote {} synthetic image(s) to {}", manifest.len(), out.display());
    Ok(())
}
