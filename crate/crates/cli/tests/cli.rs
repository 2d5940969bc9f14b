use std::path::Path;
use std::process::{Command, Output};

use oamil::data::read_annotations;
use oamil::eval::parse_metrics_csv;
use oamil::noise::mean_annotation_iou;

fn oamil(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oamil"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = oamil(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fixture() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/coco_subset.json")
}

#[test]
fn gen_synth_is_deterministic_and_counts_objects() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen-synth", "--scenes", "10", "--seed", "1", "--out", "a.json"]);
    ok(d, &["gen-synth", "--scenes", "10", "--seed", "1", "--out", "b.json"]);
    assert_eq!(std::fs::read(d.join("a.json")).unwrap(), std::fs::read(d.join("b.json")).unwrap());
    let ds = read_annotations(d.join("a.json")).unwrap();
    let objects: usize = ds.images.iter().map(|i| i.scene.as_ref().unwrap().objects.len()).sum();
    assert_eq!(ds.annotation_count(), objects);
    assert!(d.join("a.json.manifest").exists());
}

#[test]
fn exit_codes_follow_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let code = |args: &[&str]| oamil(d, args).status.code();
    assert_eq!(code(&["gen-synth", "--scenes", "0", "--out", "x.json"]), Some(2));
    assert_eq!(code(&["train", "--data", "x.json", "--out", "r", "--mode", "best"]), Some(2));
    assert_eq!(code(&["inject-noise", "--in", "missing.json", "--r", "0.1", "--out", "y.json"]), Some(3));
    std::fs::write(d.join("bad.json"), "{\"images\": 3}").unwrap();
    assert_eq!(code(&["inject-noise", "--in", "bad.json", "--r", "0.1", "--out", "y.json"]), Some(4));
    let fx = fixture();
    let fx = fx.to_str().unwrap();
    assert_eq!(code(&["train", "--data", fx, "--out", "r"]), Some(4));
    assert_eq!(code(&["gen-synth", "--scenes", "2", "--max-size", "500", "--out", "z.json"]), Some(5));
    ok(d, &["gen-synth", "--scenes", "12", "--out", "s.json"]);
    assert_eq!(
        code(&["train", "--data", "s.json", "--out", "r", "--epochs", "2", "--learning-rate", "1e307"]),
        Some(6)
    );
    std::fs::write(d.join("m.manifest"), "tool_version=0.1.0\ncommand=\"nope\"\n").unwrap();
    assert_eq!(code(&["rerun", "m.manifest"]), Some(4));
}

#[test]
fn inject_noise_on_real_style_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let fx = fixture();
    let stdout = ok(d, &["inject-noise", "--in", fx.to_str().unwrap(), "--r", "0.4", "--seed", "2", "--out", "noisy.json"]);
    let clean = read_annotations(&fx).unwrap();
    let noisy = read_annotations(d.join("noisy.json")).unwrap();
    for (a, b) in clean.images.iter().zip(&noisy.images) {
        let ids = |i: &oamil::data::ImageRecord| i.annotations.iter().map(|x| x.id).collect::<Vec<_>>();
        assert_eq!(ids(a), ids(b));
    }
    let reported: f64 = stdout.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert_eq!(reported, mean_annotation_iou(&noisy, &clean).unwrap());

    ok(d, &["inject-noise", "--in", fx.to_str().unwrap(), "--r", "0", "--out", "same.json"]);
    let same = read_annotations(d.join("same.json")).unwrap();
    for (a, b) in clean.images.iter().zip(&same.images) {
        for (x, y) in a.annotations.iter().zip(&b.annotations) {
            assert_eq!(x.bbox, y.bbox);
        }
    }
}

#[test]
fn train_then_eval_writes_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen-synth", "--scenes", "25", "--seed", "2", "--out", "clean.json"]);
    ok(d, &["inject-noise", "--in", "clean.json", "--r", "0.2", "--seed", "2", "--out", "noisy.json"]);
    ok(d, &["train", "--data", "noisy.json", "--mode", "is-loss-only", "--epochs", "2", "--seed", "4", "--out", "run"]);
    let log = std::fs::read_to_string(d.join("run/train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,total_loss,selector,classifier,generator,val_map50\n"));
    assert_eq!(log.lines().count(), 3);
    let manifest = std::fs::read_to_string(d.join("run/manifest.txt")).unwrap();
    assert!(manifest.contains("mode=\"is-loss-only\"") && manifest.contains("config.mil.gamma=7.5"));

    ok(d, &["eval", "--model", "run/model.ckpt", "--data", "noisy.json", "--out", "m.csv"]);
    let rows = parse_metrics_csv(&std::fs::read_to_string(d.join("m.csv")).unwrap(), "m.csv").unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].mode.as_str(), rows[0].noise_r, rows[0].seed), ("is-loss-only", 0.2, 4));
    assert_eq!(rows[0].run_id, "is-loss-only_r0.2_s4");
}

#[test]
fn sweep_rows_are_sorted() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "sweep", "--modes", "naive,+oa-ie", "--r-levels", "0.3,0", "--seeds", "2", "--scenes", "15",
            "--epochs", "1", "--jobs", "2", "--out", "s.csv",
        ],
    );
    let rows = parse_metrics_csv(&std::fs::read_to_string(d.join("s.csv")).unwrap(), "s.csv").unwrap();
    let keys: Vec<(String, f64, u64)> = rows.iter().map(|r| (r.mode.clone(), r.noise_r, r.seed)).collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    assert_eq!(keys, sorted);
    assert_eq!(rows.len(), 8);
}

#[test]
fn gradcheck_prints_max_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["gradcheck", "--seed", "1", "--configurations", "3"]);
    let err: f64 = out.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(err <= 1e-4, "{out}");
}
