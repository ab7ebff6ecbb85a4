use std::path::Path;
use std::process::{Command, Output};

fn qtr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qtr"))
        .args(args)
        .env_remove("QTR_API_KEY")
        .output()
        .expect("spawn qtr")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn run_writes_a_replayable_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = qtr(&["run", "--question", "park-4", "--seed", "2", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("correct: true"), "{text}");
    let hash = text
        .lines()
        .find_map(|l| l.strip_prefix("trace_hash: "))
        .unwrap()
        .to_string();
    let trace = dir.path().join("park-4").join("trace.ndjson");
    assert!(trace.exists());

    let o = qtr(&["replay", trace.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains(&hash));

    // Drop the last record: replay reports truncation and exits 1.
    let text = std::fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let cut = dir.path().join("cut.ndjson");
    std::fs::write(&cut, lines[..lines.len() - 1].join("\n")).unwrap();
    let o = qtr(&["replay", cut.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("truncated"));
}

#[test]
fn structured_run_output() {
    let o = qtr(&["run", "--question", "harbor-3", "--format", "structured"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["correct"], true);
    assert_eq!(v["trace"].as_str().unwrap().len(), 64);
    assert!(v["total_frames"].as_u64().unwrap() > 0);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&qtr(&["run", "--question", "no-such-id"])), 2);
    assert_eq!(code(&qtr(&["suite", "--format", "yaml"])), 2);
    assert_eq!(code(&qtr(&["suite", "--ablation", "no-brain"])), 2);
    assert_eq!(code(&qtr(&["replay", "/nonexistent/trace.ndjson"])), 2);
    assert_eq!(code(&qtr(&["sweep", "--durations", "30,-5"])), 2);
    assert_eq!(code(&qtr(&["frobnicate"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"budget": {"max_iterations": 0}}"#).unwrap();
    assert_eq!(code(&qtr(&["suite", "--config", cfg.to_str().unwrap()])), 2);

    let endpoint = dir.path().join("ep.json");
    std::fs::write(&endpoint, r#"{"base_url": "http://127.0.0.1:9/v1"}"#).unwrap();
    let o = qtr(&["run", "--question", "park-1", "--llm-endpoint", endpoint.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("QTR_API_KEY"));
}

#[test]
fn session_failures_exit_1() {
    // Frame vectors exist for some other clip only, so the first embed fails
    // mid-session.
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    std::fs::write(frames.join("other.json"), "[[1.0, 0.0], [0.0, 1.0]]").unwrap();
    std::fs::write(
        frames.join("manifest.json"),
        r#"{"videos": {"other": {"fps": 1.0, "vectors": "other.json"}}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = qtr(&[
        "run",
        "--question",
        "park-1",
        "--frames",
        frames.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown video"));
    // The partial trace is kept for inspection.
    assert!(out.join("park-1").join("trace.ndjson").exists());

    // A suite that names a video its world lacks is rejected at load time.
    let suite = dir.path().join("broken.json");
    let mut doc: serde_json::Value = serde_json::from_str(include_str!("../assets/suite/park.json")).unwrap();
    doc["questions"][0]["query"]["video"] = "elsewhere".into();
    std::fs::write(&suite, doc.to_string()).unwrap();
    let o = qtr(&["suite", "--suite", suite.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("elsewhere"));
}

#[test]
fn suite_and_oracle_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let suite_file = dir.path().join("one.json");
    let mut doc: serde_json::Value =
        serde_json::from_str(include_str!("../assets/suite/park.json")).unwrap();
    doc["questions"] = serde_json::Value::Array(doc["questions"].as_array().unwrap()[..4].to_vec());
    std::fs::write(&suite_file, doc.to_string()).unwrap();
    let sf = suite_file.to_str().unwrap();

    let o = qtr(&["suite", "--suite", sf, "--out", out, "--format", "structured"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["outcomes"].as_array().unwrap().len(), 4);
    for q in ["park-1", "park-2", "park-3", "park-4"] {
        assert!(Path::new(out).join(q).join("trace.ndjson").exists());
    }

    let o = qtr(&["oracle", "--suite", sf, "--question", "park-1", "--format", "delimited-table"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("park-1\t"));
}

#[test]
fn sweep_table() {
    let o = qtr(&["sweep", "--durations", "30,300", "--format", "delimited-table"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows[0], ["duration_s", "mean_frames", "frame_fraction", "accuracy"]);
    assert_eq!(rows.len(), 3);
    let f30: f64 = rows[1][2].parse().unwrap();
    let f300: f64 = rows[2][2].parse().unwrap();
    assert!(f300 <= f30);
}

#[test]
fn export_matches_shipped_assets() {
    let dir = tempfile::tempdir().unwrap();
    let o = qtr(&["export-suite", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    for name in ["park.json", "harbor.json", "festival.json"] {
        let exported = std::fs::read_to_string(dir.path().join(name)).unwrap();
        let shipped =
            std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/suite").join(name)).unwrap();
        assert_eq!(exported, shipped, "{name}");
    }
}
