use std::fs;
use std::path::Path;
use std::sync::atomic::AtomicBool;

use greenview::dataset::{convert_cityscapes, load_manifest, save_manifest, DatasetError, CITYSCAPES_VEGETATION_ID};
use greenview::imaging::mask_from_png;
use greenview::inference::open_mask_backend;
use greenview::pipeline::NEVER_CANCEL;
use image::{GrayImage, Luma, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn write_pair(root: &Path, city: &str, stem: &str, labels: GrayImage) {
    let (w, h) = labels.dimensions();
    let label_dir = root.join("gtFine").join(city);
    let image_dir = root.join("leftImg8bit").join(city);
    fs::create_dir_all(&label_dir).unwrap();
    fs::create_dir_all(&image_dir).unwrap();
    labels
        .save(label_dir.join(format!("{stem}_gtFine_labelIds.png")))
        .unwrap();
    RgbImage::from_pixel(w, h, image::Rgb([90, 120, 80]))
        .save(image_dir.join(format!("{stem}_leftImg8bit.png")))
        .unwrap();
}

#[test]
fn converts_label_rasters_and_counts_vegetation() {
    let root = tempfile::tempdir().unwrap();
    let (w, h) = (2048u32, 1024u32);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut labels = GrayImage::from_pixel(w, h, Luma([7]));
    let mut placed = 0;
    while placed < 3071 {
        let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
        if labels.get_pixel(x, y).0[0] != CITYSCAPES_VEGETATION_ID {
            labels.put_pixel(x, y, Luma([CITYSCAPES_VEGETATION_ID]));
            placed += 1;
        }
    }
    write_pair(root.path(), "aachen", "aachen_000000_000019", labels);
    write_pair(
        root.path(),
        "bremen",
        "bremen_000001_000019",
        GrayImage::from_pixel(32, 16, Luma([CITYSCAPES_VEGETATION_ID])),
    );

    let out = root.path().join("masks");
    let manifest = convert_cityscapes(
        root.path().join("gtFine"),
        root.path().join("leftImg8bit"),
        CITYSCAPES_VEGETATION_ID,
        &out,
        3,
        &NEVER_CANCEL,
    )
    .unwrap();

    assert_eq!(manifest.len(), 2);
    let first = &manifest.entries[0];
    assert_eq!(first.id, "aachen_000000_000019");
    assert_eq!(first.city, "aachen");
    assert_eq!(first.true_gvi, Some(100.0 * 3071.0 / (2048.0 * 1024.0)));
    assert!(first.image_path.ends_with("aachen/aachen_000000_000019_leftImg8bit.png"));
    let mask = mask_from_png(first.label_mask_path.as_ref().unwrap()).unwrap();
    assert_eq!(mask.vegetation_pixel_count(), 3071);
    assert_eq!(manifest.entries[1].true_gvi, Some(100.0));

    // the mask directory doubles as a mask backend keyed by id
    let backend = open_mask_backend(&out).unwrap();
    let img = greenview::RasterImage::filled("bremen_000001_000019", 32, 16, [0, 0, 0]).unwrap();
    assert_eq!(backend.estimate(&img).unwrap().gvi.value, 100.0);

    let path = root.path().join("m.csv");
    save_manifest(&manifest, &path).unwrap();
    assert_eq!(load_manifest(&path).unwrap(), manifest);
}

#[test]
fn label_without_image_is_reported() {
    let root = tempfile::tempdir().unwrap();
    write_pair(root.path(), "ulm", "ulm_000000_000019", GrayImage::new(4, 4));
    let label_dir = root.path().join("gtFine").join("ulm");
    GrayImage::new(4, 4)
        .save(label_dir.join("ulm_000001_000019_gtFine_labelIds.png"))
        .unwrap();
    let err = convert_cityscapes(
        root.path().join("gtFine"),
        root.path().join("leftImg8bit"),
        CITYSCAPES_VEGETATION_ID,
        root.path().join("out"),
        1,
        &AtomicBool::new(false),
    )
    .unwrap_err();
    match err {
        DatasetError::OrphanLabel { expected, .. } => {
            assert!(expected.ends_with("ulm/ulm_000001_000019_leftImg8bit.png"))
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn cancelled_conversion_stops() {
    let root = tempfile::tempdir().unwrap();
    for i in 0..4 {
        write_pair(root.path(), "ulm", &format!("ulm_00000{i}_000019"), GrayImage::new(4, 4));
    }
    let err = convert_cityscapes(
        root.path().join("gtFine"),
        root.path().join("leftImg8bit"),
        CITYSCAPES_VEGETATION_ID,
        root.path().join("out"),
        2,
        &AtomicBool::new(true),
    )
    .unwrap_err();
    assert!(matches!(err, DatasetError::Cancelled));
}
