//! Drives the `ufnet` binary end to end on small synthetic cohorts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Mutex, OnceLock};

use serde_json::Value;
use tempfile::TempDir;

fn ufnet(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ufnet"))
        .args(args)
        .current_dir(cwd)
        .env_remove("UFNET_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = ufnet(cwd, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A generated cohort, one split and three task bundles trained on it.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn data(&self) -> PathBuf {
        self.path("data")
    }

    fn split(&self) -> PathBuf {
        self.path("split/split.json")
    }

    fn bundles(&self) -> String {
        ["tapping", "smile", "speech"]
            .map(|t| self.path(&format!("task-{t}/bundle.json")).to_str().unwrap().to_string())
            .join(",")
    }
}

fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        let root = f.dir.path();
        ok(root, &["gen-synth", "--subjects", "400", "--out", s(&f.data())]);
        ok(root, &["split", "--data", s(&f.data()), "--out", s(&f.path("split"))]);
        for t in ["tapping", "smile", "speech"] {
            let out = f.path(&format!("task-{t}"));
            ok(
                root,
                &[
                    "train-task",
                    "--task",
                    t,
                    "--preset",
                    &format!("desk-{t}"),
                    "--data",
                    s(&f.data()),
                    "--split",
                    s(&f.split()),
                    "--out",
                    s(&out),
                ],
            );
        }
        f
    })
}

/// Trains the desk fusion model against the fixture bundles.
fn fuse(f: &Fixture, name: &str, extra: &[&str]) -> PathBuf {
    static LOCK: Mutex<()> = Mutex::new(());
    let _guard = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let out = f.path(name);
    if !out.join("bundle.json").exists() && !out.join("report.json").exists() {
        let (bundles, data, split) = (f.bundles(), f.data(), f.split());
        let mut args = vec![
            "train-fuse",
            "--preset",
            "desk-ufnet",
            "--data",
            s(&data),
            "--split",
            s(&split),
            "--task-bundles",
            &bundles,
            "--out",
            s(&out),
        ];
        args.extend_from_slice(extra);
        ok(f.dir.path(), &args);
    }
    out
}

fn eval(f: &Fixture, bundle: &Path, out: &str, extra: &[&str]) -> Output {
    let (bundles, data, split) = (f.bundles(), f.data(), f.split());
    let out = f.path(out);
    let mut args = vec![
        "eval",
        "--bundle",
        s(bundle),
        "--task-bundles",
        &bundles,
        "--data",
        s(&data),
        "--split",
        s(&split),
        "--out",
        s(&out),
    ];
    args.extend_from_slice(extra);
    ufnet(f.dir.path(), &args)
}

fn eval_report(f: &Fixture, bundle: &Path, out: &str, extra: &[&str]) -> Value {
    let o = eval(f, bundle, out, extra);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    json(&f.path(out).join("report.json"))["report"].clone()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = ufnet(dir.path(), &["frobnicate"]);
    assert_eq!(code(&o), 2);
    let o = ufnet(dir.path(), &["gen-synth", "--subjects", "0"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(ufnet(dir.path(), &["--help"]).status.success());
}

#[test]
fn missing_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = ufnet(dir.path(), &["split", "--data", "no/such/dir"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_preset_lists_the_available_ones() {
    let f = fixture();
    let o = ufnet(
        f.dir.path(),
        &["train-task", "--task", "smile", "--preset", "nope", "--data", s(&f.data()), "--split", s(&f.split())],
    );
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("available") && err.contains("desk-smile") && err.contains("smile-mc"), "{err}");
}

#[test]
fn fusion_modes_set_the_head_width() {
    let f = fixture();
    let qkv = 16;
    let early = json(&fuse(f, "fuse-early", &["--fusion-mode", "early"]).join("report.json"));
    let hybrid = json(&fuse(f, "fuse", &[]).join("report.json"));
    assert_eq!(early["head_input_width"], 3 * qkv);
    assert_eq!(hybrid["head_input_width"], 3 * qkv + 3);
}

#[test]
fn majority_baseline_votes_the_task_labels() {
    let f = fixture();
    let out = fuse(f, "majority", &["--baseline", "majority"]);
    let r = json(&out.join("report.json"));
    assert_eq!(r["model"], "baseline-majority");
    let acc = r["runs"][0]["test"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn withholding_policies_trade_coverage_for_accuracy() {
    let f = fixture();
    let bundle = fuse(f, "fuse", &[]).join("bundle.json");
    let none = eval_report(f, &bundle, "eval-none", &[]);
    assert_eq!(none["coverage"], 1.0);
    let conf = eval_report(f, &bundle, "eval-conformal", &["--withhold", "conformal"]);
    assert!(conf["coverage"].as_f64().unwrap() < 1.0);
    assert!(conf["accuracy"].as_f64().unwrap() >= none["accuracy"].as_f64().unwrap());
}

#[test]
fn ci_withholding_keeps_everything_without_dropout() {
    let f = fixture();
    // the desk baseline network has no dropout, so every interval is a point
    let out = fuse(f, "late", &["--baseline", "late", "--baseline-preset", "desk-baseline"]);
    let r = eval_report(f, &out.join("bundle.json"), "eval-late-ci", &["--withhold", "mc-ci"]);
    assert_eq!(r["coverage"], 1.0);
}

#[test]
fn eval_writes_predictions_and_subgroups_read_them() {
    let f = fixture();
    let bundle = fuse(f, "fuse", &[]).join("bundle.json");
    eval_report(f, &bundle, "eval-sub", &[]);
    let preds = f.path("eval-sub/predictions.csv");
    assert!(std::fs::read_to_string(&preds).unwrap().lines().count() > 10);
    let out = f.path("subgroup");
    ok(f.dir.path(), &["subgroup", "--predictions", s(&preds), "--data", s(&f.data()), "--out", s(&out)]);
    let r = json(&out.join("subgroup.json"));
    assert_eq!(r["attributes"][0]["attribute"], "sex");
}

#[test]
fn a_different_split_is_refused() {
    let f = fixture();
    let other = f.path("split-other");
    ok(f.dir.path(), &["split", "--data", s(&f.data()), "--seed", "9", "--out", s(&other)]);
    let bundles = f.bundles();
    let o = ufnet(
        f.dir.path(),
        &[
            "train-fuse",
            "--preset",
            "desk-ufnet",
            "--data",
            s(&f.data()),
            "--split",
            s(&other.join("split.json")),
            "--task-bundles",
            &bundles,
            "--out",
            s(&f.path("fuse-refused")),
        ],
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn evaluating_on_seen_subjects_is_refused() {
    let f = fixture();
    let bundle = fuse(f, "fuse", &[]).join("bundle.json");
    let other = f.path("split-leak");
    ok(f.dir.path(), &["split", "--data", s(&f.data()), "--seed", "11", "--out", s(&other)]);
    let bundles = f.bundles();
    let o = ufnet(
        f.dir.path(),
        &[
            "eval",
            "--bundle",
            s(&bundle),
            "--task-bundles",
            &bundles,
            "--data",
            s(&f.data()),
            "--split",
            s(&other.join("split.json")),
        ],
    );
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("subject"));
}

#[test]
fn smoothing_mismatch_is_refused() {
    let f = fixture();
    let bundle = fuse(f, "fuse", &[]).join("bundle.json");
    let o = eval(f, &bundle, "eval-smooth", &["--smoothing", "0.1"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn seed_aggregate_matches_the_runs() {
    let f = fixture();
    let out = f.path("seeds");
    ok(
        f.dir.path(),
        &[
            "train-task",
            "--task",
            "smile",
            "--preset",
            "desk-smile",
            "--data",
            s(&f.data()),
            "--split",
            s(&f.split()),
            "--seeds",
            "3",
            "--out",
            s(&out),
        ],
    );
    let r = json(&out.join("report.json"));
    let runs = r["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 3);
    for (i, run) in runs.iter().enumerate() {
        assert!(out.join(format!("seed-{i:02}/bundle.json")).exists());
        assert_eq!(run["run"], i);
    }
    for metric in ["accuracy", "auroc"] {
        let vals: Vec<f64> = runs.iter().map(|r| r["test"][metric].as_f64().unwrap()).collect();
        let mean = vals.iter().sum::<f64>() / 3.0;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
        let agg = &r["aggregate"]["metrics"][metric];
        assert!((agg["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
        assert!((agg["half_width"].as_f64().unwrap() - 1.96 * sd / 3f64.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn search_is_reproducible_from_its_seed() {
    let f = fixture();
    let run = |name: &str, trials: &str| {
        let out = f.path(name);
        ok(
            f.dir.path(),
            &[
                "search",
                "--space",
                "task",
                "--task",
                "smile",
                "--data",
                s(&f.data()),
                "--split",
                s(&f.split()),
                "--trials",
                trials,
                "--seed",
                "5",
                "--max-epochs",
                "10",
                "--out",
                s(&out),
            ],
        );
        out
    };
    let one = run("search-1", "1");
    let trials = json(&one.join("trials.json"));
    assert_eq!(trials["trials"].as_array().unwrap().len(), 1);
    assert!(one.join("best.json").exists());
    let a = run("search-3a", "3");
    let b = run("search-3b", "3");
    assert_eq!(
        std::fs::read(a.join("trials.json")).unwrap(),
        std::fs::read(b.join("trials.json")).unwrap()
    );
}

#[test]
fn replay_reports_byte_identical_outputs() {
    let f = fixture();
    let dir = fuse(f, "fuse", &[]);
    let stdout = ok(f.dir.path(), &["replay", "--manifest", s(&dir.join("manifest.json"))]);
    assert!(stdout.contains("byte-identical"), "{stdout}");
}

#[test]
fn replay_detects_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(dir.path(), &["gen-synth", "--subjects", "60", "--out", s(&data)]);
    let split = dir.path().join("s");
    ok(dir.path(), &["split", "--data", s(&data), "--out", s(&split)]);
    let csv = data.join("smile.csv");
    let mut text = std::fs::read_to_string(&csv).unwrap();
    text.push('\n');
    std::fs::write(&csv, text).unwrap();
    let o = ufnet(dir.path(), &["replay", "--manifest", s(&split.join("manifest.json"))]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn planted_sex_effect_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    // female subjects carry no signal, so their sessions are misclassified more
    let mut spec = serde_json::to_value(ufnet::data::SyntheticCohortSpec::desk()).unwrap();
    spec["female_effect_scale"] = 0.0.into();
    let spec_path = root.join("spec.json");
    std::fs::write(&spec_path, spec.to_string()).unwrap();
    let data = root.join("data");
    ok(root, &["gen-synth", "--spec", s(&spec_path), "--out", s(&data)]);
    let fused = root.join("fuse");
    ok(
        root,
        &[
            "train-fuse",
            "--preset",
            "desk-ufnet",
            "--task-presets",
            "desk-tapping,desk-smile,desk-speech",
            "--data",
            s(&data),
            "--out",
            s(&fused),
        ],
    );
    let ev = root.join("eval");
    let split = fused.join("split.json");
    let tasks = ["tapping", "smile", "speech"].map(|t| s(&fused.join(format!("task-{t}.json"))).to_string()).join(",");
    ok(
        root,
        &[
            "eval",
            "--bundle",
            s(&fused.join("bundle.json")),
            "--task-bundles",
            &tasks,
            "--data",
            s(&data),
            "--split",
            s(&split),
            "--out",
            s(&ev),
        ],
    );
    let sub = root.join("sub");
    ok(
        root,
        &["subgroup", "--predictions", s(&ev.join("predictions.csv")), "--data", s(&data), "--out", s(&sub)],
    );
    let r = json(&sub.join("subgroup.json"));
    let sex = &r["attributes"][0];
    assert_eq!(sex["attribute"], "sex");
    let p = sex["tests"][0]["z_p_value"].as_f64().unwrap();
    assert!(p < 0.05, "sex difference p = {p}");
}
