use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn neusort(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neusort"))
        .args(args)
        .current_dir(dir)
        .env_remove("NEUSORT_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = neusort(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["generate", "syn1", "--duration", "5", "--seed", "7", "--out", "a"], d);
    ok(&["generate", "syn1", "--duration", "5", "--seed", "7", "--out", "b"], d);
    for ext in [".bin", ".truth.csv", ".meta.json"] {
        let a = std::fs::read(d.join(format!("a{ext}"))).unwrap();
        let b = std::fs::read(d.join(format!("b{ext}"))).unwrap();
        assert_eq!(a, b, "{ext} differs");
    }
    let meta: Value = serde_json::from_slice(&std::fs::read(d.join("a.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 7);
    assert_eq!(meta["spec"]["seed"], 7);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_neusort"))
            .args(["generate", "syn1", "--duration", "2", "--out", out])
            .current_dir(d)
            .env("NEUSORT_SEED", "11")
            .output()
            .unwrap();
        assert!(o.status.success());
    };
    run("e");
    let meta: Value = serde_json::from_slice(&std::fs::read(d.join("e.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 11);
}

#[test]
fn hybrid_levels_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["generate", "hybrid", "--noise", "0.4", "--out", "h"], d);
    let meta: Value = serde_json::from_slice(&std::fs::read(d.join("h.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["noise_level"], 0.4);

    let bad = neusort(&["generate", "hybrid", "--noise", "0.3", "--out", "x"], d);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unsupported noise level"));
    let forced = neusort(&["generate", "hybrid", "--noise", "0.3", "--allow-any-noise", "--out", "x"], d);
    assert!(forced.status.success());
    assert!(String::from_utf8_lossy(&forced.stderr).contains("warning"));
}

#[test]
fn sort_then_eval_syn1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["generate", "syn1", "--seed", "1", "--out", "s"], d);
    let summary: Value = serde_json::from_str(&ok(&["sort", "--trace", "s.bin", "--out", "r.jsonl", "--seed", "1"], d)).unwrap();
    assert_eq!(summary["channels"][0]["valid_unit_count"], 3);
    assert!(summary["events_per_input"].as_f64().unwrap() > 0.0);

    let report: Value = serde_json::from_str(&ok(&["eval", "--results", "r.jsonl", "--truth", "s.truth.csv", "--format", "json"], d)).unwrap();
    assert!(report["accuracy"].as_f64().unwrap() >= 0.9);

    let csv = ok(&["eval", "--results", "r.jsonl", "--truth", "s.truth.csv", "--format", "csv"], d);
    assert!(csv.starts_with("spike_detected,spike_assigned,tp,fn,fp,accuracy,precision,recall,f_score\n"));
}

#[test]
fn deterministic_sort_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["generate", "syn1", "--duration", "6", "--seed", "3", "--out", "s"], d);
    for out in ["a.jsonl", "b.jsonl"] {
        ok(&["sort", "--trace", "s.bin", "--out", out, "--deterministic", "--seed", "5"], d);
    }
    assert_eq!(std::fs::read(d.join("a.jsonl")).unwrap(), std::fs::read(d.join("b.jsonl")).unwrap());
}

#[test]
fn empty_trace_sorts_to_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("e.bin"), b"{\"sample_rate_hz\":30000,\"channels\":1,\"format\":\"f32le\"}\n").unwrap();
    let summary: Value = serde_json::from_str(&ok(&["sort", "--trace", "e.bin", "--out", "r.jsonl"], d)).unwrap();
    assert_eq!(summary["spikes"], 0);
    assert_eq!(summary["channels"][0]["candidates"], 0);
    assert_eq!(summary["events_per_input"], 0.0);
    assert!(std::fs::read(d.join("r.jsonl")).unwrap().is_empty());
}

#[test]
fn malformed_header_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.bin"), b"{\"sample_rate_hz\":30000,\"format\":\"f32le\"}\n").unwrap();
    let out = neusort(&["sort", "--trace", "bad.bin", "--out", "r.jsonl"], d);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("channels"));
}

#[test]
fn invalid_override_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["generate", "syn1", "--duration", "1", "--out", "s"], d);
    let out = neusort(&["sort", "--trace", "s.bin", "--out", "r.jsonl", "--beta", "3"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("r.jsonl").exists());
    let out = neusort(&["sort", "--trace", "s.bin", "--out", "r.jsonl", "--detect_k", "-1"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = neusort(&["eval", "--results", "r.jsonl", "--truth", "none.csv"], d);
    assert_eq!(missing.status.code(), Some(3));
    assert!(!missing.stderr.is_empty());

    std::fs::write(d.join("t.csv"), "timestamp_samples,unit\n100,1\n").unwrap();
    std::fs::write(
        d.join("r.jsonl"),
        "{\"channel_id\":1,\"timestamp_samples\":100,\"unit\":1,\"potential\":30.0}\n",
    )
    .unwrap();
    let wrong = neusort(&["eval", "--results", "r.jsonl", "--truth", "t.csv", "--channel", "0"], d);
    assert_eq!(wrong.status.code(), Some(2));
    let perfect = ok(&["eval", "--results", "r.jsonl", "--truth", "t.csv", "--format", "json"], d);
    let v: Value = serde_json::from_str(&perfect).unwrap();
    for k in ["accuracy", "precision", "recall", "f_score"] {
        assert_eq!(v[k], 1.0, "{k}");
    }
    let xml = neusort(&["eval", "--results", "r.jsonl", "--truth", "t.csv", "--format", "xml"], d);
    assert_eq!(xml.status.code(), Some(2));
}

#[test]
fn bench_reports_fit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(&["bench", "--n", "200,400,800"], d);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "n,seconds");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].contains("r2="));

    let single = ok(&["bench", "--n", "200"], d);
    assert!(!single.contains("slope"));
    assert_eq!(neusort(&["bench", "--n", "10"], d).status.code(), Some(2));
}

#[test]
fn power_matches_reference_points() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["power", "--events-per-input", "41"], dir.path());
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!((v["power_mw"].as_f64().unwrap() / 0.317 - 1.0).abs() < 0.01);
    let out = ok(&["power", "--events-per-input", "41", "--alpha-pj", "45"], dir.path());
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!((v["power_mw"].as_f64().unwrap() / 0.605 - 1.0).abs() < 0.01);
}

#[test]
fn power_reads_sort_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["generate", "syn1", "--duration", "4", "--out", "s"], d);
    ok(&["sort", "--trace", "s.bin", "--out", "r.jsonl", "--summary", "sum.json"], d);
    let v: Value = serde_json::from_str(&ok(&["power", "--summary", "sum.json"], d)).unwrap();
    assert!(v["power_w"].as_f64().unwrap() > 0.0);
}

#[test]
fn snapshot_of_analysis_stream_has_two_active_nodes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["generate", "analysis", "--seed", "1", "--out", "a"], d);
    ok(
        &["sort", "--candidates", "a.candidates.jsonl", "--out", "r.jsonl", "--save-state", "state.json", "--seed", "1"],
        d,
    );
    let text = ok(&["snapshot", "--state", "state.json", "--out", "w"], d);
    assert!(text.starts_with("2 active, 7 blank"), "{text}");
    let snap: Value = serde_json::from_slice(&std::fs::read(d.join("w.json")).unwrap()).unwrap();
    assert_eq!(snap["nodes"].as_array().unwrap().len(), 9);
    let csv = std::fs::read_to_string(d.join("w.csv")).unwrap();
    assert!(csv.starts_with("node,row,col,weight\n"));
    assert_eq!(csv.lines().count(), 1 + 9 * 31 * 64);
}

#[test]
fn fresh_state_is_blank_and_corruption_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("e.bin"), b"{\"sample_rate_hz\":30000,\"channels\":1,\"format\":\"f32le\"}\n").unwrap();
    ok(&["sort", "--trace", "e.bin", "--out", "r.jsonl", "--save-state", "state.json"], d);
    let text = ok(&["snapshot", "--state", "state.json", "--out", "w"], d);
    assert!(text.starts_with("0 active, 9 blank"), "{text}");

    let mut bytes = std::fs::read(d.join("state.json")).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(d.join("broken.json"), bytes).unwrap();
    let out = neusort(&["snapshot", "--state", "broken.json", "--out", "w"], d);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));

    let none = neusort(&["snapshot", "--state", "missing.json", "--out", "w"], d);
    assert_eq!(none.status.code(), Some(3));
}

#[test]
fn resume_continues_from_saved_state() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["generate", "syn1", "--duration", "20", "--seed", "2", "--out", "s"], d);
    let first: Value = serde_json::from_str(&ok(&["sort", "--trace", "s.bin", "--out", "r1.jsonl", "--save-state", "st.json"], d)).unwrap();
    let second: Value = serde_json::from_str(&ok(&["sort", "--trace", "s.bin", "--out", "r2.jsonl", "--resume", "st.json"], d)).unwrap();
    let before = first["channels"][0]["provisional_fraction"].as_f64().unwrap();
    let after = second["channels"][0]["provisional_fraction"].as_f64().unwrap();
    assert!(after < before && after < 0.02, "{before} -> {after}");
    assert_eq!(second["channels"][0]["valid_unit_count"], 3);
}
