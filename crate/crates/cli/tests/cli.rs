use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;

const SMALL: &[&str] = &[
    "mannequin.sample_grid=[24,24]",
    "dataset.rows=8",
    "dataset.cols=8",
    "dataset.corners=false",
    "dataset.halton_count=60",
    "fk.hidden=[16,16]",
    "fk.train.max_epochs=12",
    "s2r.train.max_epochs=15",
    "capture.frames=12",
    "ik.sample_count=120",
    "ik.i_max=5",
    "target.grid=20",
    "eval.actuations=3",
    "eval.grid=10",
    "audit.gradcheck.probes=3",
    "audit.gradcheck.sample_count=100",
    "audit.gradcheck.target_grid=15",
    "audit.gradcost_trials=1",
];

fn surfik(out: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_surfik"));
    cmd.args(args).arg("--out").arg(out).env_remove("SURFIK_OUT");
    for s in SMALL {
        cmd.arg("--set").arg(s);
    }
    cmd.output().unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = surfik(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

/// Output directory with every stage run once.
fn trained() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        for args in [
            &["gen-dataset"][..],
            &["capture"],
            &["train", "fk"],
            &["train", "s2r"],
            &["train", "baseline"],
            &["gen-target"],
        ] {
            ok(dir.path(), args);
        }
        dir
    })
    .path()
}

#[test]
fn default_config_describes_the_full_scene() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_surfik"))
        .arg("show-config")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    let cfg: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(cfg["capture"]["frames"], 40);
    assert_eq!(cfg["dataset"]["halton_count"], 488);
    assert_eq!(cfg["dataset"]["corners"], true);
    assert_eq!(cfg["ik"]["i_max"], 30);
    assert_eq!(cfg["ik"]["sample_count"], 1200);
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = surfik(dir.path(), &["gen-dataset", "--config", "/nonexistent/run.json"]);
    assert_eq!(o.status.code(), Some(2));
    let o = surfik(dir.path(), &["show-config", "--set", "fk.no_such_key=3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = surfik(dir.path(), &["show-config", "--set", "ik.tau_terminal=\"small\""]);
    assert_eq!(o.status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"nope\": 1}").unwrap();
    assert_eq!(
        surfik(dir.path(), &["show-config", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn overrides_and_config_files_combine() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.json");
    std::fs::write(&file, r#"{"seed": 7, "ik": {"i_max": 12}}"#).unwrap();
    let text = ok(
        dir.path(),
        &[
            "show-config",
            "--config",
            file.to_str().unwrap(),
            "--set",
            "ik.tau_terminal=0.02",
        ],
    );
    let cfg: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg["seed"], 7);
    assert_eq!(cfg["ik"]["i_max"], 5);
    assert_eq!(cfg["ik"]["tau_terminal"], 0.02);
    assert_eq!(cfg["ik"]["shrink_factor"], 0.5);
}

#[test]
fn missing_prerequisites_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["capture"]);
    let o = surfik(dir.path(), &["train", "s2r"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fk.json"));
    assert_eq!(surfik(dir.path(), &["train", "fk"]).status.code(), Some(3));
    assert_eq!(surfik(dir.path(), &["audit", "gradcheck"]).status.code(), Some(3));
}

#[test]
fn unreadable_target_exits_with_two() {
    let dir = trained();
    let junk = dir.join("junk.obj");
    std::fs::write(&junk, "v 1 2\nf 1 2 9\n").unwrap();
    let o = surfik(dir, &["solve", "--target", junk.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = surfik(dir, &["solve", "--target", "/nonexistent.obj"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn training_writes_checkpoints_and_loss_history() {
    let dir = trained();
    for (name, epochs) in [("fk_loss.csv", 12), ("s2r_loss.csv", 15), ("baseline_loss.csv", 15)] {
        let csv = std::fs::read_to_string(dir.join(name)).unwrap();
        assert_eq!(csv.lines().count(), epochs + 1, "{name}");
    }
    for name in ["fk.json", "s2r.json", "baseline.json", "dataset/manifest.json"] {
        assert!(dir.join(name).exists(), "{name}");
    }
}

#[test]
fn capture_reports_counts_and_writes_nulls() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["capture", "--frames", "30", "--seed", "2"]);
    assert!(text.contains("frames 30"), "{text}");
    let frames = std::fs::read_to_string(dir.path().join("frames.jsonl")).unwrap();
    assert_eq!(frames.lines().count(), 30);
    let incomplete: usize = text
        .split("incomplete ")
        .nth(1)
        .and_then(|s| s.split(',').next())
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(frames.lines().filter(|l| l.contains("null")).count(), incomplete);
}

#[test]
fn solve_writes_result_and_trace() {
    let dir = trained();
    let text = ok(dir, &["solve"]);
    assert!(text.contains("wall time") && text.contains(" ms"), "{text}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("solve.json")).unwrap()).unwrap();
    for key in ["a_opt", "rotation", "translation", "trace", "converged", "wall_time_ms"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    let trace = std::fs::read_to_string(dir.join("solve_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), json["trace"].as_array().unwrap().len() + 1);
}

#[test]
fn eval_includes_baseline_when_present() {
    let dir = trained();
    ok(dir, &["eval"]);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("eval.json")).unwrap()).unwrap();
    assert!(json["reduction"].is_number());
    assert!(json["baseline"]["calibrated"]["mean"].is_number());
    assert_eq!(
        std::fs::read_to_string(dir.join("eval.csv")).unwrap().lines().count(),
        4
    );
}

#[test]
fn audits_report_and_fail_with_four() {
    let dir = trained();
    ok(dir, &["audit", "gradcheck"]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("audit_gradcheck.json")).unwrap()).unwrap();
    assert_eq!(report["probes"].as_array().unwrap().len(), 3);
    let o = surfik(dir, &["audit", "gradcost", "--set", "audit.min_cost_ratio=1e9"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cost ratio"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("audit_gradcost.json")).unwrap()).unwrap();
    assert_eq!(report["fd_evaluations"], 10);
    let o = surfik(dir, &["audit", "ablation"]);
    assert!(matches!(o.status.code(), Some(0) | Some(4)));
    let rows: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("audit_ablation.json")).unwrap()).unwrap();
    let checks: Vec<&str> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["check"].as_str().unwrap())
        .collect();
    assert_eq!(checks, ["delta_vs_absolute", "controls_vs_vertices"]);
}

#[test]
fn output_root_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_surfik"))
        .args([
            "capture",
            "--set",
            "capture.frames=2",
            "--set",
            "mannequin.sample_grid=[20,20]",
        ])
        .env("SURFIK_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("frames.jsonl").exists());
}
