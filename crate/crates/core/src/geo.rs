//! Street-network sampling, Street View image acquisition and GeoJSON export.
//!
//! Networks arrive as GeoJSON `LineString` / `MultiLineString` features.
//! Sample points are placed along each polyline at a fixed arc-length
//! interval measured with the haversine formula on a sphere of radius
//! [`EARTH_RADIUS_M`].

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::gvi::{GviMeasurement, Source};
use crate::imaging::{self, CameraPose, ImagingError, LatLon, RasterImage};
use crate::pipeline::{map_ordered, PipelineError};

pub const EARTH_RADIUS_M: f64 = 6_371_008.8;
pub const DEFAULT_HEADINGS: [f64; 6] = [0.0, 60.0, 120.0, 180.0, 240.0, 300.0];
pub const API_KEY_ENV: &str = "GREENVIEW_API_KEY";

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("street network has no segments")]
    EmptyNetwork,
    #[error("invalid street network: {0}")]
    InvalidNetwork(String),
    #[error("interval must be positive, got {0}")]
    InvalidInterval(f64),
    #[error("heading {0} outside [0, 360)")]
    InvalidHeading(f64),
    #[error("requested {requested} points but only {available} are available")]
    NotEnoughPoints { requested: usize, available: usize },
    #[error("imagery quota exceeded (HTTP {status})")]
    QuotaExceeded { status: u16 },
    #[error("no imagery at point {0:?}")]
    NoImageryAtPoint(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    TransportError { attempts: u32, message: String },
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed GeoJSON: {0}")]
    MalformedGeoJson(String),
    #[error("environment variable {API_KEY_ENV} is not set")]
    MissingApiKey,
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("cancelled")]
    Cancelled,
}

pub type Result<T, E = GeoError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GeoError + '_ {
    move |source| GeoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Great-circle distance in meters.
pub fn haversine_m(a: LatLon, b: LatLon) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreetSegment {
    pub id: String,
    pub vertices: Vec<LatLon>,
}

impl StreetSegment {
    pub fn length_m(&self) -> f64 {
        self.vertices.windows(2).map(|w| haversine_m(w[0], w[1])).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StreetNetwork {
    pub segments: Vec<StreetSegment>,
}

impl StreetNetwork {
    pub fn new(segments: Vec<StreetSegment>) -> Result<Self> {
        let mut ids = HashSet::new();
        for s in &segments {
            if s.vertices.len() < 2 {
                return Err(GeoError::InvalidNetwork(format!(
                    "segment {:?} has {} vertex(es), need at least 2",
                    s.id,
                    s.vertices.len()
                )));
            }
            if let Some(v) = s.vertices.iter().find(|v| !v.is_valid()) {
                return Err(GeoError::InvalidNetwork(format!(
                    "segment {:?} has out-of-range vertex ({}, {})",
                    s.id, v.lat, v.lon
                )));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(GeoError::InvalidNetwork(format!("duplicate segment id {:?}", s.id)));
            }
        }
        Ok(Self { segments })
    }

    pub fn from_geojson_str(text: &str) -> Result<Self> {
        let root: Value =
            serde_json::from_str(text).map_err(|e| GeoError::MalformedGeoJson(e.to_string()))?;
        let features: Vec<&Value> = match root.get("type").and_then(Value::as_str) {
            Some("FeatureCollection") => root
                .get("features")
                .and_then(Value::as_array)
                .ok_or_else(|| GeoError::MalformedGeoJson("features is not an array".into()))?
                .iter()
                .collect(),
            Some("Feature") | Some("LineString") | Some("MultiLineString") => vec![&root],
            other => {
                return Err(GeoError::MalformedGeoJson(format!(
                    "unsupported root type {other:?}"
                )))
            }
        };

        let mut segments = Vec::new();
        for (i, feature) in features.into_iter().enumerate() {
            let geometry = if feature.get("type").and_then(Value::as_str) == Some("Feature") {
                match feature.get("geometry") {
                    Some(g) if !g.is_null() => g,
                    _ => continue,
                }
            } else {
                feature
            };
            let id = feature_id(feature).unwrap_or_else(|| format!("f{i}"));
            let coords = geometry.get("coordinates");
            match geometry.get("type").and_then(Value::as_str) {
                Some("LineString") => segments.push(StreetSegment {
                    id,
                    vertices: parse_line(coords)?,
                }),
                Some("MultiLineString") => {
                    let parts = coords.and_then(Value::as_array).ok_or_else(|| {
                        GeoError::MalformedGeoJson(format!("{id}: coordinates not an array"))
                    })?;
                    for (k, part) in parts.iter().enumerate() {
                        segments.push(StreetSegment {
                            id: format!("{id}/{k}"),
                            vertices: parse_line(Some(part))?,
                        });
                    }
                }
                _ => continue,
            }
        }
        Self::new(segments)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_geojson_str(&text)
    }
}

fn feature_id(feature: &Value) -> Option<String> {
    let raw = feature
        .get("id")
        .or_else(|| feature.get("properties").and_then(|p| p.get("id")))?;
    match raw {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_line(coords: Option<&Value>) -> Result<Vec<LatLon>> {
    let bad = || GeoError::MalformedGeoJson("line coordinates must be [lon, lat] pairs".into());
    coords
        .and_then(Value::as_array)
        .ok_or_else(bad)?
        .iter()
        .map(|c| {
            let pair = c.as_array().filter(|a| a.len() >= 2).ok_or_else(bad)?;
            let lon = pair[0].as_f64().ok_or_else(bad)?;
            let lat = pair[1].as_f64().ok_or_else(bad)?;
            Ok(LatLon::new(lat, lon))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub point_id: String,
    pub location: LatLon,
    pub segment_id: String,
    pub requested_headings: Vec<f64>,
    /// Arc length from the segment start, meters.
    pub arc_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingOptions {
    pub interval_m: f64,
    pub headings: Vec<f64>,
    /// Uniform along-street jitter of up to this many meters; 0 disables it.
    pub jitter_m: f64,
    pub seed: u64,
}

impl SamplingOptions {
    pub fn new(interval_m: f64) -> Self {
        Self {
            interval_m,
            headings: DEFAULT_HEADINGS.to_vec(),
            jitter_m: 0.0,
            seed: 0,
        }
    }
}

/// Number of points [`sample_points`] places on a segment of `length_m`.
pub fn points_on_segment(length_m: f64, interval_m: f64) -> usize {
    let first = interval_m / 2.0;
    if length_m < first {
        0
    } else {
        ((length_m - first) / interval_m).floor() as usize + 1
    }
}

/// Coordinates at `arc_m` meters along a polyline, interpolated linearly in
/// latitude/longitude within the containing edge.
fn locate(vertices: &[LatLon], cumulative: &[f64], arc_m: f64) -> LatLon {
    let edge = cumulative
        .partition_point(|&c| c <= arc_m)
        .clamp(1, vertices.len() - 1)
        - 1;
    let (a, b) = (vertices[edge], vertices[edge + 1]);
    let len = cumulative[edge + 1] - cumulative[edge];
    let t = if len > 0.0 {
        ((arc_m - cumulative[edge]) / len).clamp(0.0, 1.0)
    } else {
        0.0
    };
    LatLon::new(a.lat + t * (b.lat - a.lat), a.lon + t * (b.lon - a.lon))
}

pub fn sample_points(network: &StreetNetwork, interval_m: f64, seed: u64) -> Result<Vec<SamplePoint>> {
    sample_points_with(
        network,
        &SamplingOptions {
            seed,
            ..SamplingOptions::new(interval_m)
        },
    )
}

/// Places points at arc lengths `interval/2 + k * interval` along every
/// segment.
pub fn sample_points_with(network: &StreetNetwork, opts: &SamplingOptions) -> Result<Vec<SamplePoint>> {
    if network.segments.is_empty() {
        return Err(GeoError::EmptyNetwork);
    }
    if !(opts.interval_m.is_finite() && opts.interval_m > 0.0) {
        return Err(GeoError::InvalidInterval(opts.interval_m));
    }
    if let Some(&h) = opts.headings.iter().find(|h| !(0.0..360.0).contains(*h)) {
        return Err(GeoError::InvalidHeading(h));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut points = Vec::new();
    for segment in &network.segments {
        let mut cumulative = Vec::with_capacity(segment.vertices.len());
        cumulative.push(0.0);
        for w in segment.vertices.windows(2) {
            cumulative.push(cumulative.last().unwrap() + haversine_m(w[0], w[1]));
        }
        let length = *cumulative.last().unwrap();
        for k in 0..points_on_segment(length, opts.interval_m) {
            let mut arc = opts.interval_m / 2.0 + k as f64 * opts.interval_m;
            if opts.jitter_m > 0.0 {
                arc = (arc + rng.random_range(-opts.jitter_m..=opts.jitter_m)).clamp(0.0, length);
            }
            points.push(SamplePoint {
                point_id: format!("{}:{k}", segment.id),
                location: locate(&segment.vertices, &cumulative, arc),
                segment_id: segment.id.clone(),
                requested_headings: opts.headings.clone(),
                arc_m: arc,
            });
        }
    }
    Ok(points)
}

/// Uniform sample of `k` points without replacement, kept in input order.
pub fn random_subsample(points: &[SamplePoint], k: usize, seed: u64) -> Result<Vec<SamplePoint>> {
    if k > points.len() {
        return Err(GeoError::NotEnoughPoints {
            requested: k,
            available: points.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, points.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| points[i].clone()).collect())
}

/// Token bucket shared by all fetching threads.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    /// `requests_per_second <= 0` disables limiting.
    pub fn new(requests_per_second: f64) -> Self {
        let capacity = requests_per_second.max(1.0);
        Self {
            rate: requests_per_second,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    pub fn acquire(&self) {
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return;
        }
        loop {
            let wait = {
                let mut state = self.state.lock().expect("rate limiter poisoned");
                let now = Instant::now();
                let refill = now.duration_since(state.1).as_secs_f64() * self.rate;
                state.0 = (state.0 + refill).min(self.capacity);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                (1.0 - state.0) / self.rate
            };
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageryClientConfig {
    /// Street View-compatible endpoint, e.g. `https://host/maps/api/streetview`.
    pub endpoint: String,
    pub api_key: String,
    pub image_size: (u32, u32),
    pub pitch: f64,
    pub cache_dir: PathBuf,
    pub requests_per_second: f64,
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub timeout: Duration,
}

impl ImageryClientConfig {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            image_size: (640, 640),
            pitch: 0.0,
            cache_dir: cache_dir.into(),
            requests_per_second: 10.0,
            max_attempts: 3,
            backoff_base: Duration::from_millis(500),
            timeout: Duration::from_secs(30),
        }
    }

    /// Reads the API key from `GREENVIEW_API_KEY`.
    pub fn from_env(endpoint: impl Into<String>, cache_dir: impl Into<PathBuf>) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| GeoError::MissingApiKey)?;
        Ok(Self::new(endpoint, key, cache_dir))
    }
}

enum Fetched {
    Image(Vec<u8>),
    Unavailable,
}

/// Caching, rate-limited client for a Street View-style static image API.
pub struct ImageryClient {
    config: ImageryClientConfig,
    agent: ureq::Agent,
    limiter: RateLimiter,
    network_calls: AtomicUsize,
}

const UNAVAILABLE_MARKER: &str = "none";
const IMAGE_EXT: &str = "img";

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

impl ImageryClient {
    pub fn new(config: ImageryClientConfig) -> Self {
        let agent_config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build();
        Self {
            limiter: RateLimiter::new(config.requests_per_second),
            agent: ureq::Agent::new_with_config(agent_config),
            config,
            network_calls: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &ImageryClientConfig {
        &self.config
    }

    /// HTTP requests issued so far, retries included.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::Relaxed)
    }

    fn cache_path(&self, point_id: &str, heading: f64, ext: &str) -> PathBuf {
        self.config
            .cache_dir
            .join(sanitize(point_id))
            .join(format!("h{heading}.{ext}"))
    }

    pub fn request_url(&self, location: LatLon, heading: f64) -> String {
        let key: String = url::form_urlencoded::byte_serialize(self.config.api_key.as_bytes()).collect();
        format!(
            "{}?location={},{}&heading={}&pitch={}&size={}x{}&key={}",
            self.config.endpoint,
            location.lat,
            location.lon,
            heading,
            self.config.pitch,
            self.config.image_size.0,
            self.config.image_size.1,
            key
        )
    }

    fn request(&self, url: &str) -> Result<Fetched> {
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                let backoff = self.config.backoff_base * 2u32.pow(attempt - 2);
                log::debug!("retrying in {backoff:?} after: {last}");
                thread::sleep(backoff);
            }
            self.limiter.acquire();
            self.network_calls.fetch_add(1, Ordering::Relaxed);
            let response = match self.agent.get(url).call() {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = response.status().as_u16();
            match status {
                200 => {
                    let mut body = response.into_body();
                    match body.read_to_vec() {
                        Ok(bytes) => return Ok(Fetched::Image(bytes)),
                        Err(e) => last = e.to_string(),
                    }
                }
                204 | 404 => return Ok(Fetched::Unavailable),
                403 | 429 => return Err(GeoError::QuotaExceeded { status }),
                500..=599 => last = format!("HTTP {status}"),
                _ => {
                    return Err(GeoError::TransportError {
                        attempts: attempt,
                        message: format!("HTTP {status}"),
                    })
                }
            }
        }
        Err(GeoError::TransportError {
            attempts,
            message: last,
        })
    }

    fn write_cache(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let tmp = path.with_extension("part");
        fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    /// One image per heading that has imagery, each stamped with the point's
    /// location and its pose. Cached results, including "no imagery"
    /// answers, are served without touching the network.
    pub fn fetch(&self, point: &SamplePoint, headings: &[f64]) -> Result<Vec<RasterImage>> {
        let mut images = Vec::new();
        for &heading in headings {
            if !(0.0..360.0).contains(&heading) {
                return Err(GeoError::InvalidHeading(heading));
            }
            let image_path = self.cache_path(&point.point_id, heading, IMAGE_EXT);
            let marker_path = self.cache_path(&point.point_id, heading, UNAVAILABLE_MARKER);
            let bytes = if image_path.is_file() {
                fs::read(&image_path).map_err(io_err(&image_path))?
            } else if marker_path.is_file() {
                continue;
            } else {
                match self.request(&self.request_url(point.location, heading))? {
                    Fetched::Image(bytes) => {
                        // validate before caching
                        imaging::decode_image_bytes("", &bytes, &image_path)?;
                        self.write_cache(&image_path, &bytes)?;
                        bytes
                    }
                    Fetched::Unavailable => {
                        self.write_cache(&marker_path, b"")?;
                        continue;
                    }
                }
            };
            let id = format!("{}_h{heading}", sanitize(&point.point_id));
            let img = imaging::decode_image_bytes(id, &bytes, &image_path)?
                .with_location(point.location)
                .with_pose(CameraPose {
                    heading,
                    pitch: self.config.pitch,
                });
            images.push(img);
        }
        if images.is_empty() {
            return Err(GeoError::NoImageryAtPoint(point.point_id.clone()));
        }
        Ok(images)
    }

    /// Fetches every point's requested headings on `workers` threads.
    /// Points without imagery yield an empty list.
    pub fn fetch_many(
        &self,
        points: &[SamplePoint],
        workers: usize,
        cancel: &AtomicBool,
    ) -> Result<Vec<Vec<RasterImage>>> {
        map_ordered(points.iter().collect(), workers, cancel, |_, p: &SamplePoint| {
            match self.fetch(p, &p.requested_headings) {
                Err(GeoError::NoImageryAtPoint(id)) => {
                    log::warn!("no imagery at point {id}");
                    Ok(Vec::new())
                }
                other => other,
            }
        })
        .map_err(|e| match e {
            PipelineError::Cancelled => GeoError::Cancelled,
            PipelineError::Item { error, .. } => error,
        })
    }
}

pub fn fetch_street_imagery(
    client: &ImageryClient,
    point: &SamplePoint,
    headings: &[f64],
) -> Result<Vec<RasterImage>> {
    client.fetch(point, headings)
}

/// One exported point with its GVI.
#[derive(Debug, Clone, PartialEq)]
pub struct GviFeature {
    pub point_id: String,
    pub location: LatLon,
    pub gvi: f64,
    pub n_images: usize,
    pub source: Source,
}

impl GviFeature {
    pub fn new(point: &SamplePoint, gvi: &GviMeasurement) -> Self {
        Self {
            point_id: point.point_id.clone(),
            location: point.location,
            gvi: gvi.value,
            n_images: gvi.n_images,
            source: gvi.source,
        }
    }
}

pub fn to_geojson(features: &[GviFeature]) -> Value {
    let features: Vec<Value> = features
        .iter()
        .map(|f| {
            json!({
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [f.location.lon, f.location.lat],
                },
                "properties": {
                    "point_id": f.point_id,
                    "gvi": f.gvi,
                    "n_images": f.n_images,
                    "source": f.source.as_str(),
                },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn write_geojson(features: &[GviFeature], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&to_geojson(features)).expect("JSON value serializes");
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Writes `(point, measurement)` pairs as a FeatureCollection of points.
pub fn export_geojson(results: &[(SamplePoint, GviMeasurement)], path: impl AsRef<Path>) -> Result<()> {
    let features: Vec<GviFeature> = results.iter().map(|(p, m)| GviFeature::new(p, m)).collect();
    write_geojson(&features, path)
}

pub fn import_geojson(path: impl AsRef<Path>) -> Result<Vec<GviFeature>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_gvi_geojson(&text)
}

pub fn parse_gvi_geojson(text: &str) -> Result<Vec<GviFeature>> {
    let bad = |m: &str| GeoError::MalformedGeoJson(m.to_string());
    let root: Value = serde_json::from_str(text).map_err(|e| bad(&e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(bad("expected a FeatureCollection"));
    }
    root.get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("features is not an array"))?
        .iter()
        .map(|f| {
            let coords = f
                .pointer("/geometry/coordinates")
                .and_then(Value::as_array)
                .filter(|c| c.len() >= 2)
                .ok_or_else(|| bad("feature without point coordinates"))?;
            let props = f.get("properties").ok_or_else(|| bad("feature without properties"))?;
            let lon = coords[0].as_f64().ok_or_else(|| bad("non-numeric longitude"))?;
            let lat = coords[1].as_f64().ok_or_else(|| bad("non-numeric latitude"))?;
            Ok(GviFeature {
                point_id: props
                    .get("point_id")
                    .and_then(Value::as_str)
                    .ok_or_else(|| bad("missing point_id"))?
                    .to_string(),
                location: LatLon::new(lat, lon),
                gvi: props
                    .get("gvi")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| bad("missing gvi"))?,
                n_images: props
                    .get("n_images")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| bad("missing n_images"))? as usize,
                source: props
                    .get("source")
                    .and_then(Value::as_str)
                    .ok_or_else(|| bad("missing source"))?
                    .parse()
                    .map_err(|e: String| bad(&e))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Meridian-free equatorial segment of the given length.
    fn equatorial(id: &str, length_m: f64) -> StreetSegment {
        let dlon = (length_m / EARTH_RADIUS_M).to_degrees();
        StreetSegment {
            id: id.into(),
            vertices: vec![LatLon::new(0.0, 10.0), LatLon::new(0.0, 10.0 + dlon)],
        }
    }

    #[test]
    fn equatorial_haversine() {
        let seg = equatorial("s", 100.0);
        assert!((seg.length_m() - 100.0).abs() < 1e-6);
    }

    #[test]
    fn two_points_on_hundred_meters() {
        let net = StreetNetwork::new(vec![equatorial("s", 100.0)]).unwrap();
        let pts = sample_points(&net, 50.0, 0).unwrap();
        assert_eq!(pts.len(), 2);
        let start = net.segments[0].vertices[0];
        assert!((haversine_m(start, pts[0].location) - 25.0).abs() < 1e-6);
        assert!((haversine_m(start, pts[1].location) - 75.0).abs() < 1e-6);
        assert_eq!(pts[0].point_id, "s:0");
        assert_eq!(pts[1].requested_headings, DEFAULT_HEADINGS.to_vec());
    }

    #[test]
    fn short_segment_has_no_points() {
        let net = StreetNetwork::new(vec![equatorial("s", 20.0)]).unwrap();
        assert!(sample_points(&net, 50.0, 0).unwrap().is_empty());
    }

    #[test]
    fn sampling_errors() {
        assert!(matches!(
            sample_points(&StreetNetwork::default(), 10.0, 0),
            Err(GeoError::EmptyNetwork)
        ));
        let net = StreetNetwork::new(vec![equatorial("s", 20.0)]).unwrap();
        assert!(matches!(sample_points(&net, 0.0, 0), Err(GeoError::InvalidInterval(_))));
        let mut opts = SamplingOptions::new(5.0);
        opts.headings = vec![360.0];
        assert!(matches!(sample_points_with(&net, &opts), Err(GeoError::InvalidHeading(_))));
    }

    #[test]
    fn jitter_is_seeded() {
        let net = StreetNetwork::new(vec![equatorial("s", 500.0)]).unwrap();
        let mut opts = SamplingOptions::new(50.0);
        opts.jitter_m = 10.0;
        opts.seed = 3;
        let a = sample_points_with(&net, &opts).unwrap();
        assert_eq!(a, sample_points_with(&net, &opts).unwrap());
        assert!(a.iter().enumerate().any(|(k, p)| (p.arc_m - (25.0 + 50.0 * k as f64)).abs() > 1e-9));
        assert!(a.iter().enumerate().all(|(k, p)| (p.arc_m - (25.0 + 50.0 * k as f64)).abs() <= 10.0));
    }

    #[test]
    fn geojson_network_parsing() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","id":"main","geometry":{"type":"LineString","coordinates":[[103.8,1.3],[103.801,1.3]]},"properties":{}},
            {"type":"Feature","properties":{"id":7},"geometry":{"type":"MultiLineString","coordinates":[[[0,0],[0,0.001]],[[1,1],[1,1.001],[1.001,1.001]]]}},
            {"type":"Feature","properties":{},"geometry":{"type":"Point","coordinates":[0,0]}},
            {"type":"Feature","properties":{},"geometry":{"type":"LineString","coordinates":[[5,5],[5,5.001]]}}
        ]}"#;
        let net = StreetNetwork::from_geojson_str(text).unwrap();
        let ids: Vec<&str> = net.segments.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["main", "7/0", "7/1", "f3"]);
        assert_eq!(net.segments[0].vertices[0], LatLon::new(1.3, 103.8));
        assert!(StreetNetwork::from_geojson_str(
            r#"{"type":"LineString","coordinates":[[0,0]]}"#
        )
        .is_err());
    }

    #[test]
    fn subsample_rules() {
        let net = StreetNetwork::new(vec![equatorial("s", 10_000.0)]).unwrap();
        let pts = sample_points(&net, 10.0, 0).unwrap();
        assert_eq!(pts.len(), 1000);
        assert_eq!(random_subsample(&pts, pts.len(), 1).unwrap(), pts);
        assert!(random_subsample(&pts, 0, 1).unwrap().is_empty());
        let a = random_subsample(&pts, 100, 1).unwrap();
        assert_eq!(a, random_subsample(&pts, 100, 1).unwrap());
        assert_ne!(a, random_subsample(&pts, 100, 2).unwrap());
        assert!(matches!(
            random_subsample(&pts, 1001, 1),
            Err(GeoError::NotEnoughPoints { .. })
        ));
    }

    #[test]
    fn geojson_axis_order() {
        let f = GviFeature {
            point_id: "p".into(),
            location: LatLon::new(1.3, 103.8),
            gvi: 25.0,
            n_images: 6,
            source: Source::Baseline,
        };
        let v = to_geojson(std::slice::from_ref(&f));
        assert_eq!(v.pointer("/features/0/geometry/coordinates"), Some(&json!([103.8, 1.3])));
        assert_eq!(parse_gvi_geojson(&v.to_string()).unwrap(), vec![f]);
        let empty = to_geojson(&[]);
        assert_eq!(empty, json!({"type": "FeatureCollection", "features": []}));
    }

    #[test]
    fn unlimited_rate_limiter_does_not_block() {
        let rl = RateLimiter::new(0.0);
        let start = Instant::now();
        for _ in 0..1000 {
            rl.acquire();
        }
        assert!(start.elapsed() < Duration::from_millis(100));
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let rl = RateLimiter::new(50.0);
        let start = Instant::now();
        for _ in 0..60 {
            rl.acquire();
        }
        // 50 burst tokens, then 10 more at 50/s
        assert!(start.elapsed() >= Duration::from_millis(180));
    }

    #[test]
    fn request_url_shape() {
        let client = ImageryClient::new(ImageryClientConfig::new("http://h/sv", "k&y", "/tmp/x"));
        assert_eq!(
            client.request_url(LatLon::new(1.5, -2.25), 60.0),
            "http://h/sv?location=1.5,-2.25&heading=60&pitch=0&size=640x640&key=k%26y"
        );
    }
}
