use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::AtomicBool;

use greenview::imaging::encode_mask_png;
use greenview::synth::{self, DatasetOptions};
use greenview::VegetationMask;
use greenview_cli::commands::load_manifest;

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["greenview"];
    full.extend_from_slice(args);
    greenview_cli::run_with_cancel(full, &AtomicBool::new(false))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dataset(dir: &Path, n: usize) -> PathBuf {
    let data = dir.join("data");
    synth::write_dataset(&data, &DatasetOptions::new(n, 5)).unwrap();
    synth::manifest_path(&data)
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_greenview");
    assert_eq!(Command::new(bin).arg("--help").status().unwrap().code(), Some(0));
    assert_eq!(Command::new(bin).arg("no-such-command").status().unwrap().code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let status = Command::new(bin)
        .args(["gvi", "--manifest", s(&missing), "--out", s(&dir.path().join("o.csv"))])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 4);
    let out = dir.path().join("o.csv");
    assert_eq!(run(&["gvi", "--manifest", s(&manifest), "--out", s(&out), "--backend", "model"]), 2);
    assert_eq!(run(&["gvi", "--manifest", s(&manifest), "--out", s(&out), "--connectivity", "6"]), 2);
    assert_eq!(run(&["split", "--manifest", s(&manifest), "--out", s(&out), "--sizes", "1,1,1"]), 2);
    assert_eq!(run(&["split", "--manifest", s(&manifest), "--out", s(&out), "--sizes", "2,2"]), 2);
    assert_eq!(run(&["--workers", "0", "gvi", "--manifest", s(&manifest), "--out", s(&out)]), 2);
    assert!(!out.exists());
}

#[test]
fn segment_then_mask_dir_reproduces_baseline_scores() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 12);
    let masks = dir.path().join("masks");
    assert_eq!(run(&["segment", "--manifest", s(&manifest), "--out", s(&masks)]), 0);
    assert_eq!(fs::read_dir(&masks).unwrap().count(), 12);

    let a = dir.path().join("baseline.json");
    let b = dir.path().join("masks.json");
    assert_eq!(run(&["evaluate", "--manifest", s(&manifest), "--out", s(&a)]), 0);
    assert_eq!(run(&["evaluate", "--manifest", s(&manifest), "--out", s(&b), "--mask-dir", s(&masks)]), 0);
    let a: serde_json::Value = serde_json::from_slice(&fs::read(a).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&fs::read(b).unwrap()).unwrap();
    for key in ["mean_iou", "mae", "pearson_r", "err_p5", "err_p95", "n"] {
        assert_eq!(a[key], b[key], "{key}");
    }
    assert!(a["running_time_s_per_10k"].is_null());
    assert!(fs::read_to_string(dir.path().join("baseline.txt")).unwrap().contains("Threshold and cluster"));
}

#[test]
fn gvi_writes_image_point_and_city_tables() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 24);
    let out = dir.path().join("gvi.csv");
    assert_eq!(run(&["gvi", "--manifest", s(&manifest), "--out", s(&out)]), 0);
    let images = csv_rows(&out);
    let points = csv_rows(&dir.path().join("gvi_points.csv"));
    let cities = csv_rows(&dir.path().join("gvi_cities.csv"));
    assert_eq!(images.len(), 24);
    assert_eq!(points.len(), 4);
    assert_eq!(cities.len(), 2);
    for r in &images {
        let g: f64 = r[3].parse().unwrap();
        assert!((0.0..=100.0).contains(&g));
    }

    let geojson = dir.path().join("points.geojson");
    let points_csv = dir.path().join("gvi_points.csv");
    assert_eq!(run(&["export-geojson", "--points", s(&points_csv), "--out", s(&geojson)]), 0);
    let features = greenview::geo::import_geojson(&geojson).unwrap();
    assert_eq!(features.len(), 4);
    assert_eq!(features[0].n_images, 6);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 6);
    let config = dir.path().join("greenview.toml");
    fs::write(&config, "[baseline]\nmin_cluster_area = 1000000\n").unwrap();

    let from_config = dir.path().join("a.csv");
    assert_eq!(run(&["--config", s(&config), "gvi", "--manifest", s(&manifest), "--out", s(&from_config)]), 0);
    assert!(csv_rows(&from_config).iter().all(|r| r[3].parse::<f64>().unwrap() == 0.0));

    let overridden = dir.path().join("b.csv");
    let code = run(&[
        "--config", s(&config), "gvi",
        "--manifest", s(&manifest),
        "--out", s(&overridden),
        "--min-cluster-area", "100",
    ]);
    assert_eq!(code, 0);
    assert!(csv_rows(&overridden).iter().any(|r| r[3].parse::<f64>().unwrap() > 0.0));

    fs::write(&config, "workers = \"many\"\n").unwrap();
    assert_eq!(run(&["--config", s(&config), "gvi", "--manifest", s(&manifest), "--out", s(&overridden)]), 2);
}

#[test]
fn cancellation_leaves_no_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 20);
    let masks = dir.path().join("masks");
    let cancel = AtomicBool::new(true);
    let code = greenview_cli::run_with_cancel(
        ["greenview", "segment", "--manifest", s(&manifest), "--out", s(&masks)],
        &cancel,
    );
    assert_eq!(code, 1);
    assert_eq!(fs::read_dir(&masks).map(|d| d.count()).unwrap_or(0), 0);
}

#[test]
fn failure_midway_removes_written_masks() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = dataset(dir.path(), 10);
    let manifest = load_manifest(&manifest_path).unwrap();
    fs::write(&manifest.entries[7].image_path, b"not an image").unwrap();
    let masks = dir.path().join("masks");
    let code = run(&["--workers", "1", "segment", "--manifest", s(&manifest_path), "--out", s(&masks)]);
    assert_eq!(code, 1);
    assert_eq!(fs::read_dir(&masks).map(|d| d.count()).unwrap_or(0), 0);
}

#[test]
fn split_writes_assignments() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 20);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        assert_eq!(run(&["--seed", "9", "split", "--manifest", s(&manifest), "--out", s(out), "--sizes", "12,4,4"]), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let split = load_manifest(&a).unwrap();
    let train = split.entries.iter().filter(|e| e.split == Some(greenview::dataset::Split::Train)).count();
    assert_eq!(train, 12);
}

#[test]
fn convert_cityscapes_builds_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("gtFine/zurich");
    let images = dir.path().join("leftImg8bit/zurich");
    fs::create_dir_all(&labels).unwrap();
    fs::create_dir_all(&images).unwrap();
    let ids: Vec<u8> = (0..16).map(|i| if i < 4 { 21 } else { 7 }).collect();
    image::GrayImage::from_raw(4, 4, ids).unwrap().save(labels.join("zurich_000000_000019_gtFine_labelIds.png")).unwrap();
    image::RgbImage::new(4, 4).save(images.join("zurich_000000_000019_leftImg8bit.png")).unwrap();

    let out = dir.path().join("converted");
    let code = run(&[
        "convert-cityscapes",
        "--labels", s(&dir.path().join("gtFine")),
        "--images", s(&dir.path().join("leftImg8bit")),
        "--out", s(&out),
    ]);
    assert_eq!(code, 0);
    let manifest = load_manifest(&out.join("manifest.csv")).unwrap();
    assert_eq!(manifest.len(), 1);
    assert_eq!(manifest.entries[0].true_gvi, Some(25.0));
}

#[test]
fn sample_points_from_geojson() {
    let dir = tempfile::tempdir().unwrap();
    let network = dir.path().join("streets.geojson");
    fs::write(
        &network,
        r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"id":"main"},
             "geometry":{"type":"LineString","coordinates":[[103.8,1.3],[103.803,1.3]]}}]}"#,
    )
    .unwrap();
    let out = dir.path().join("points.csv");
    let code = run(&["sample-points", "--network", s(&network), "--out", s(&out), "--interval", "50", "--headings", "0,180"]);
    assert_eq!(code, 0);
    let rows = csv_rows(&out);
    // about 333.9 m of street
    assert_eq!(rows.len(), 7);
    assert_eq!(&rows[0][0], "main:0");
    assert_eq!(&rows[0][5], "0;180");
    assert_eq!(run(&["sample-points", "--network", s(&network), "--out", s(&out), "--interval", "-1"]), 2);
}

#[test]
fn mask_dir_size_mismatch_fails() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 2);
    let masks = dir.path().join("masks");
    fs::create_dir_all(&masks).unwrap();
    for e in load_manifest(&manifest).unwrap().entries {
        fs::write(masks.join(format!("{}.png", e.id)), encode_mask_png(&VegetationMask::filled(3, 3, true))).unwrap();
    }
    let out = dir.path().join("gvi.csv");
    assert_eq!(run(&["gvi", "--manifest", s(&manifest), "--out", s(&out), "--mask-dir", s(&masks)]), 1);
    assert!(!out.exists());
}
