use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use synapse::cli::{RunManifest, PARAMS_FILE, REPORT_CSV, REPORT_JSON, RUN_MANIFEST_FILE, SPLIT_FILE};
use synapse::data::PhantomSpec;
use synapse::inference::TunerRecord;
use synapse::modality::Modality;
use synapse::report::CohortReport;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_synapse-net"));
    c.env("RAYON_NUM_THREADS", "1").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn desk_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/wmh_desk.json")
}

fn phantom(root: &Path, name: &str, n: usize, seed: u64) -> PathBuf {
    let spec = PhantomSpec::lesion(n, &[Modality::Flair, Modality::T1w], (6, 32, 32), seed);
    let spec_path = root.join(format!("{name}_spec.json"));
    std::fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let out = root.join(name);
    ok(&["phantom", "--spec", p(&spec_path), "--out", p(&out)]);
    out
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join(RUN_MANIFEST_FILE)).unwrap()).unwrap()
}

#[test]
fn train_tune_predict_evaluate_overlay() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let train = phantom(root, "train", 3, 31);
    let val = phantom(root, "val", 2, 32);
    let test = phantom(root, "test", 2, 33);
    let run_dir = root.join("run");
    ok(&["train", "--config", p(&desk_config()), "--data", p(&train), "--out", p(&run_dir), "--max-steps", "3"]);
    assert!(run_dir.join("last").is_dir() && run_dir.join(SPLIT_FILE).is_file());
    let m = manifest(&run_dir);
    assert_eq!(m.command, "train");
    assert!(m.config_hash.is_some());
    assert!(m.artifacts.windows(2).all(|w| w[0] <= w[1]));

    let tuned = root.join("tuned");
    ok(&["tune", "--checkpoint", p(&run_dir), "--val-data", p(&val), "--out", p(&tuned)]);
    let record = TunerRecord::read(&tuned.join(PARAMS_FILE)).unwrap();
    assert_eq!(record.validation_ids.len(), 2);

    let pred = root.join("pred");
    let params = tuned.join(PARAMS_FILE);
    ok(&["predict", "--checkpoint", p(&run_dir), "--params", p(&params), "--in", p(&test), "--out", p(&pred)]);
    assert!(pred.join("phantom-s33-000").join("mask.nii.gz").is_file());

    let eval = root.join("eval");
    ok(&["evaluate", "--pred", p(&pred), "--gt", p(&test), "--out", p(&eval), "--baseline", p(&pred)]);
    let report = CohortReport::read_json(&eval.join(REPORT_JSON)).unwrap();
    assert_eq!(report.cases.len(), 2);
    assert!(eval.join(REPORT_CSV).is_file());
    assert!(!report.comparisons.is_empty());
    for c in &report.comparisons {
        assert_eq!(c.test.t, 0.0);
        assert_eq!(c.test.p, 1.0);
    }

    // Predicting on the subjects the parameters were tuned on is leakage.
    let leak = run(&["predict", "--checkpoint", p(&run_dir), "--params", p(&params), "--in", p(&val), "--out", p(&root.join("leak"))]);
    assert_eq!(leak.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&leak.stderr).contains("phantom-s32-"));

    let ov = root.join("overlay");
    let subject = "phantom-s33-001";
    ok(&[
        "overlay",
        "--image",
        p(&test.join(subject)),
        "--pred",
        p(&pred.join(subject)),
        "--gt",
        p(&test.join(subject)),
        "--out",
        p(&ov),
    ]);
    assert_eq!(std::fs::read_dir(&ov).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count(), 6);
}

#[test]
fn ground_truth_scored_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = phantom(tmp.path(), "gt", 3, 41);
    let eval = tmp.path().join("eval");
    ok(&["evaluate", "--pred", p(&gt), "--gt", p(&gt), "--out", p(&eval), "--match-rule", "0.5"]);
    let report = CohortReport::read_json(&eval.join(REPORT_JSON)).unwrap();
    let dsc = &report.classes[0].metrics["dsc"];
    assert_eq!(dsc.mean, 1.0);
    assert_eq!(report.cases.len(), 3);
    assert_eq!(manifest(&eval).artifacts.len(), 2);
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let gt = phantom(root, "gt", 2, 51);

    let bad_cfg = root.join("bad.json");
    std::fs::write(&bad_cfg, "{\"x\": 1}").unwrap();
    let out = run(&["train", "--config", p(&bad_cfg), "--data", p(&gt), "--out", p(&root.join("r"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["evaluate", "--pred", p(&root.join("nothing")), "--gt", p(&gt), "--out", p(&root.join("e"))]);
    assert_eq!(out.status.code(), Some(3));

    let out = run(&["evaluate", "--pred", p(&gt), "--gt", p(&gt), "--out", p(&root.join("e")), "--match-rule", "2"]);
    assert_eq!(out.status.code(), Some(2));

    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn phantom_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = phantom(tmp.path(), "a", 2, 61);
    let b = phantom(tmp.path(), "b", 2, 61);
    for subject in ["phantom-s61-000", "phantom-s61-001"] {
        for file in ["image.f32", "mask.u8", "header.json"] {
            let x = std::fs::read(a.join(subject).join(file)).unwrap();
            let y = std::fs::read(b.join(subject).join(file)).unwrap();
            assert!(x == y, "{subject}/{file} differs");
        }
    }
}
