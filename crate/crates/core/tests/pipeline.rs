use std::path::PathBuf;

use oamil::data::{generate_scenes, read_annotations, read_annotations_str, to_json_string, LayoutSpec, Provenance};
use oamil::eval::evaluate;
use oamil::noise::{mean_annotation_iou, perturb_dataset, NoiseSpec};
use oamil::trainer::{train, Mode, TrainConfig};
use oamil::Error;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/coco_subset.json")
}

#[test]
fn real_style_file_round_trips() {
    let ds = read_annotations(fixture()).unwrap();
    assert_eq!(ds.images.len(), 3);
    assert_eq!(ds.annotation_count(), 5);
    assert!(ds.extra.contains_key("info") && ds.extra.contains_key("licenses"));
    let text = to_json_string(&ds).unwrap();
    let back = read_annotations_str(&text, "mem").unwrap();
    assert_eq!(back, ds);
    assert_eq!(to_json_string(&back).unwrap(), text);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["images"][0]["file_name"], "000101.jpg");
    assert_eq!(v["annotations"][0]["iscrowd"], 0);
}

#[test]
fn zero_noise_is_identity_on_in_bounds_boxes() {
    let ds = read_annotations(fixture()).unwrap();
    let out = perturb_dataset(&ds, &NoiseSpec::new(0.0, 5).unwrap()).unwrap();
    for (a, b) in ds.images.iter().zip(&out.images) {
        for (x, y) in a.annotations.iter().zip(&b.annotations) {
            assert_eq!(x.bbox, y.bbox);
        }
    }
    assert_eq!(mean_annotation_iou(&ds, &out).unwrap(), 1.0);
}

#[test]
fn heavy_noise_moves_boxes_and_keeps_ids() {
    let ds = read_annotations(fixture()).unwrap();
    let out = perturb_dataset(&ds, &NoiseSpec::new(0.4, 1).unwrap()).unwrap();
    assert_eq!(out.provenance, Provenance::Noisy { r: 0.4, seed: 1 });
    let mut sum = 0.0;
    for (a, b) in ds.images.iter().zip(&out.images) {
        assert_eq!(a.id, b.id);
        for (x, y) in a.annotations.iter().zip(&b.annotations) {
            assert_eq!((x.id, x.category_id), (y.id, y.category_id));
            let nb = y.to_box().unwrap();
            assert!(y.bbox != x.bbox || nb == a.bounds(), "annotation {} unchanged", x.id);
            assert!(a.bounds().contains(&nb));
            sum += x.to_box().unwrap().iou(&nb);
        }
    }
    let reported = mean_annotation_iou(&out, &ds).unwrap();
    assert!((reported - sum / 5.0).abs() < 1e-15);
}

#[test]
fn training_needs_scene_geometry() {
    let ds = read_annotations(fixture()).unwrap();
    let err = train(&ds, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::MissingScene { image_id: 101 }), "{err}");
}

#[test]
fn generate_perturb_train_evaluate() {
    let layout = LayoutSpec::default();
    let clean = generate_scenes(40, &layout, 8).unwrap();
    let noisy = perturb_dataset(&clean, &NoiseSpec::new(0.2, 8).unwrap()).unwrap();
    let reread = read_annotations_str(&to_json_string(&noisy).unwrap(), "mem").unwrap();
    assert_eq!(reread, noisy);

    let cfg = TrainConfig {
        mode: Mode::OaIe,
        epochs: 4,
        seed: 3,
        track_val_map: true,
        ..TrainConfig::default()
    };
    let (det, log) = train(&reread, &cfg).unwrap();
    assert_eq!(log.epochs.len(), 4);
    assert_eq!(log.train_indices.len() + log.val_indices.len(), 40);
    assert!(log.epochs.iter().all(|e| e.loss.total.is_finite() && e.val_map50.is_some()));
    let first = log.epochs[0].loss.total;
    let last = log.epochs[3].loss.total;
    assert!(last < first, "loss {first} -> {last}");

    let report = evaluate(&det, &reread, Some(&log.val_indices), &cfg.eval).unwrap();
    assert_eq!(Some(report.map50), log.epochs[3].val_map50);
    assert!((0.0..=1.0).contains(&report.diagnostic.cls_acc));

    let (det2, log2) = train(&reread, &cfg).unwrap();
    assert_eq!(det2, det);
    assert_eq!(log2, log);
}
