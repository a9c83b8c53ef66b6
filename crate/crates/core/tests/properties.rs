use std::collections::HashMap;

use greenview::baseline::{filter_clusters, segment, threshold_green};
use greenview::components::label_components;
use greenview::dataset::{split_dataset, Split};
use greenview::geo;
use greenview::gvi::{aggregate, gvi_of_mask};
use greenview::imaging::{mask_from_png, mask_to_png};
use greenview::metrics::{iou, pearson_r, quantile_in_place};
use greenview::*;
use proptest::prelude::*;

fn arb_mask(max: u32) -> impl Strategy<Value = VegetationMask> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<bool>(), (w * h) as usize)
            .prop_map(move |bits| VegetationMask::new(w, h, bits).unwrap())
    })
}

fn arb_image(max: u32) -> impl Strategy<Value = RasterImage> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        // bias toward greenish pixels so clusters actually form
        proptest::collection::vec((0u8..=255, 0u8..=255, 0u8..=255), (w * h) as usize).prop_map(move |px| {
            let flat: Vec<u8> = px.into_iter().flat_map(|(r, g, b)| [r / 2, g, b / 2]).collect();
            RasterImage::new("p", w, h, flat).unwrap()
        })
    })
}

fn arb_config() -> impl Strategy<Value = BaselineConfig> {
    (0u8..30, -20i32..60, 0usize..20, any::<bool>()).prop_map(|(m, t, a, eight)| BaselineConfig {
        green_dominance_margin: m,
        excess_green_threshold: t,
        min_cluster_area: a,
        connectivity: if eight { Connectivity::Eight } else { Connectivity::Four },
    })
}

fn flip_image(img: &RasterImage, vertical: bool) -> RasterImage {
    let (w, h) = (img.width(), img.height());
    RasterImage::from_fn("f", w, h, |x, y| {
        if vertical {
            img.pixel(x, h - 1 - y)
        } else {
            img.pixel(w - 1 - x, y)
        }
    })
    .unwrap()
}

/// Planar distance in degrees from `p` to the edge `a`-`b`.
fn edge_distance_deg(a: LatLon, b: LatLon, p: LatLon) -> f64 {
    let (dx, dy) = (b.lon - a.lon, b.lat - a.lat);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.lon - a.lon) * dx + (p.lat - a.lat) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((a.lon + t * dx - p.lon).powi(2) + (a.lat + t * dy - p.lat).powi(2)).sqrt()
}

fn subset(a: &VegetationMask, b: &VegetationMask) -> bool {
    a.bits().iter().zip(b.bits()).all(|(&x, &y)| !x || y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mask_png_round_trip(mask in arb_mask(40)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        mask_to_png(&mask, &path).unwrap();
        prop_assert_eq!(mask_from_png(&path).unwrap(), mask);
    }

    #[test]
    fn raising_threshold_shrinks_mask(img in arb_image(24), cfg in arb_config(), bump in 0i32..40) {
        let strict = BaselineConfig { excess_green_threshold: cfg.excess_green_threshold + bump, ..cfg.clone() };
        prop_assert!(subset(&threshold_green(&img, &strict), &threshold_green(&img, &cfg)));
        let stricter = BaselineConfig { green_dominance_margin: cfg.green_dominance_margin.saturating_add(bump as u8), ..cfg.clone() };
        prop_assert!(subset(&threshold_green(&img, &stricter), &threshold_green(&img, &cfg)));
    }

    #[test]
    fn cluster_filter_is_idempotent_and_shrinking(mask in arb_mask(32), cfg in arb_config()) {
        let once = filter_clusters(&mask, &cfg);
        prop_assert!(subset(&once, &mask));
        prop_assert_eq!(&filter_clusters(&once, &cfg), &once);
        let labels = label_components(&once, cfg.connectivity);
        prop_assert!(labels.areas.iter().all(|&a| a >= cfg.min_cluster_area));
    }

    #[test]
    fn segmentation_commutes_with_flips(img in arb_image(24), cfg in arb_config()) {
        let m = segment(&img, &cfg);
        prop_assert_eq!(segment(&flip_image(&img, true), &cfg), m.flip_vertical());
        prop_assert_eq!(segment(&flip_image(&img, false), &cfg), m.flip_horizontal());
    }

    #[test]
    fn gvi_is_a_bounded_pixel_share(mask in arb_mask(40)) {
        let g = gvi_of_mask(&mask).unwrap();
        prop_assert!((0.0..=100.0).contains(&g.value));
        let expected = 100.0 * mask.bits().iter().filter(|&&b| b).count() as f64 / mask.bits().len() as f64;
        prop_assert_eq!(g.value, expected);
    }

    #[test]
    fn aggregate_is_order_free_and_bounded(values in proptest::collection::vec(0.0f64..=100.0, 1..30), rot in 0usize..30) {
        let ms: Vec<GviMeasurement> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| GviMeasurement::new(format!("i{i:02}"), v, Scope::Image, 1, Source::Baseline).unwrap())
            .collect();
        let a = aggregate(&ms, Scope::Point).unwrap();
        let mut rotated = ms.clone();
        rotated.rotate_left(rot % ms.len());
        rotated.reverse();
        let b = aggregate(&rotated, Scope::Point).unwrap();
        prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a.value >= lo - 1e-9 && a.value <= hi + 1e-9);
        prop_assert_eq!(a.n_images, values.len());
    }

    #[test]
    fn iou_is_symmetric_and_bounded((a, b) in (1u32..24, 1u32..24).prop_flat_map(|(w, h)| {
        let n = (w * h) as usize;
        (proptest::collection::vec(any::<bool>(), n), proptest::collection::vec(any::<bool>(), n))
            .prop_map(move |(x, y)| (VegetationMask::new(w, h, x).unwrap(), VegetationMask::new(w, h, y).unwrap()))
    })) {
        let ab = iou(&a, &b).unwrap();
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn pearson_ignores_positive_affine_maps(
        pairs in proptest::collection::vec((0.0f64..40.0, 0.0f64..100.0), 3..40),
        scale in 0.5f64..1.5,
        shift in 0.0f64..30.0,
    ) {
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let yspread = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ys.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3 && yspread > 1e-3);
        let base: Vec<PairedSample> = pairs.iter().enumerate().map(|(i, &(x, y))| PairedSample::new(format!("{i}"), x, y)).collect();
        let mapped: Vec<PairedSample> = pairs.iter().enumerate().map(|(i, &(x, y))| PairedSample::new(format!("{i}"), scale * x + shift, y)).collect();
        let r = pearson_r(&base).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert!((r - pearson_r(&mapped).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn quantiles_are_monotone(values in proptest::collection::vec(-100.0f64..100.0, 1..60), p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let a = quantile_in_place(&mut values.clone(), lo);
        let b = quantile_in_place(&mut values.clone(), hi);
        prop_assert!(a <= b);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a >= min && b <= max);
    }

    #[test]
    fn split_partitions_every_entry(
        cities in proptest::collection::vec(0usize..4, 1..80),
        seed in any::<u64>(),
        stratify in any::<bool>(),
        cut in (0.0f64..1.0, 0.0f64..1.0),
    ) {
        let n = cities.len();
        let entries: Vec<ManifestEntry> = cities
            .iter()
            .enumerate()
            .map(|(i, c)| ManifestEntry::new(format!("e{i:03}"), format!("c{c}"), format!("{i}.png")))
            .collect();
        let manifest = SampleManifest::new(entries).unwrap();
        let (a, b) = if cut.0 <= cut.1 { cut } else { (cut.1, cut.0) };
        let train = (a * n as f64) as usize;
        let val = (b * n as f64) as usize - train;
        let sizes = SplitSizes::new(train, val, n - train - val);
        let out = split_dataset(&manifest, sizes, seed, stratify).unwrap();
        prop_assert_eq!(out.len(), n);
        let mut counts: HashMap<Split, usize> = HashMap::new();
        for e in &out.entries {
            *counts.entry(e.split.unwrap()).or_default() += 1;
        }
        prop_assert_eq!(counts.get(&Split::Train).copied().unwrap_or(0), sizes.train);
        prop_assert_eq!(counts.get(&Split::Val).copied().unwrap_or(0), sizes.val);
        prop_assert_eq!(counts.get(&Split::Test).copied().unwrap_or(0), sizes.test);
        let mut ids: Vec<&str> = out.entries.iter().map(|e| e.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
        prop_assert_eq!(split_dataset(&manifest, sizes, seed, stratify).unwrap(), out);
    }

    #[test]
    fn sampled_points_lie_on_their_polyline(
        verts in proptest::collection::vec((-60.0f64..60.0, -170.0f64..170.0), 2..6)
            .prop_map(|v| {
                // keep edges short so interpolation stays well-conditioned
                let (lat0, lon0) = v[0];
                v.iter().enumerate().map(|(i, &(a, b))| {
                    let lat = if i == 0 { lat0 } else { lat0 + a.rem_euclid(1.0) * 0.01 * i as f64 };
                    let lon = if i == 0 { lon0 } else { lon0 + b.rem_euclid(1.0) * 0.01 * i as f64 };
                    LatLon::new(lat, lon)
                }).collect::<Vec<_>>()
            }),
        interval in 5.0f64..400.0,
    ) {
        let seg = geo::StreetSegment { id: "s".into(), vertices: verts.clone() };
        let expected = geo::points_on_segment(seg.length_m(), interval);
        let net = StreetNetwork::new(vec![seg]).unwrap();
        let pts = geo::sample_points(&net, interval, 0).unwrap();
        prop_assert_eq!(pts.len(), expected);
        for p in &pts {
            let d = verts
                .windows(2)
                .map(|w| edge_distance_deg(w[0], w[1], p.location))
                .fold(f64::INFINITY, f64::min);
            prop_assert!(d < 1e-9, "point {:?} is {d} degrees off the polyline", p.location);
        }
    }
}
