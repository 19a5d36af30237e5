// Command-line behaviour: exit codes, determinism and steering refusal.

use std::fs;
use std::path::Path;

use anat9::cli::run;
use anat9::toydetect::QueryBank;

fn anat9(args: &[&str]) -> i32 {
    let mut argv = vec!["anat9"];
    argv.extend_from_slice(args);
    run(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(anat9(&["--seed", "5", "--out", s(out), "synth", "--count", "8"]), 0);
        let (input, boxes, aug) = (out.join("labels.json"), out.join("boxes.json"), out.join("aug"));
        let args = ["--seed", "5", "--jobs", "2", "--out", s(&aug), "augment", "--input", s(&input), "--boxes", s(&boxes)];
        assert_eq!(anat9(&args), 0);
    }
    for name in ["labels.raw", "boxes.json", "synth_report.json", "aug/labels.raw", "aug/boxes.json", "aug/augment_report.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
}

#[test]
fn different_seeds_give_different_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(anat9(&["--seed", "1", "--out", s(&a), "synth", "--count", "4"]), 0);
    assert_eq!(anat9(&["--seed", "2", "--out", s(&b), "synth", "--count", "4"]), 0);
    assert_ne!(fs::read(a.join("boxes.json")).unwrap(), fs::read(b.join("boxes.json")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    assert_eq!(anat9(&["--help"]), 0);
    assert_eq!(anat9(&["--version"]), 0);
    assert_eq!(anat9(&["synth", "--count", "many"]), 1);
    assert_eq!(anat9(&["match", "--gt", "x.json"]), 1);
    assert_eq!(anat9(&["--out", out, "match", "--gt", "x.json", "--pred", "y.json"]), 2);

    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"scene": {"instance_count": 4, "colour": "red"}}"#).unwrap();
    assert_eq!(anat9(&["--config", s(&cfg), "--out", out, "synth"]), 2);

    let too_many = dir.path().join("big.json");
    fs::write(&too_many, r#"{"scene": {"instance_count": 400}}"#).unwrap();
    assert_eq!(anat9(&["--config", s(&too_many), "--out", out, "synth"]), 2);
}

#[test]
fn evaluate_det_reports_dropped_instance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(anat9(&["--out", s(&d.join("s")), "synth", "--count", "8"]), 0);
    let gt = d.join("s/boxes.json");
    assert_eq!(anat9(&["--out", s(&d.join("p")), "perturb", "--boxes", s(&gt), "--drop", "3"]), 0);
    let pred = d.join("p/pred.json");
    assert_eq!(anat9(&["--out", s(&d.join("e")), "evaluate-det", "--gt", s(&gt), s(&gt), "--pred", s(&pred), s(&gt)]), 0);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("e/det_report.json")).unwrap()).unwrap();
    assert_eq!(report["id_rate"].as_f64().unwrap(), 15.0 / 16.0);
    assert!(report["config"]["thresholds"].is_object());
    let csv = fs::read_to_string(d.join("e/det_instances.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);
}

#[test]
fn infer_refuses_unbound_banks_and_unknown_labels() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("cfg.json");
    fs::write(&cfg, r#"{"train": {"epochs": 50, "dataset": {"scene": {"instance_count": 6}, "count": 1}}}"#).unwrap();
    assert_eq!(anat9(&["--config", s(&cfg), "--out", s(d), "train-toy"]), 0);
    let bank_path = d.join("bank.json");
    assert_eq!(anat9(&["--out", s(d), "infer-toy", "--bank", s(&bank_path), "--labels", "2,4"]), 0);
    assert_eq!(anat9(&["--out", s(d), "infer-toy", "--bank", s(&bank_path), "--labels", "7"]), 2);

    let mut bank = QueryBank::load(&bank_path).unwrap();
    bank.binding.as_mut().unwrap().query_to_label.swap(0, 1);
    bank.save(&bank_path).unwrap();
    assert_eq!(anat9(&["--out", s(d), "infer-toy", "--bank", s(&bank_path)]), 2);
}
