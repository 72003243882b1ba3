//! End-to-end tests of the `attnamer` binary: exit codes, file handling,
//! stdout discipline.

use std::path::Path;
use std::process::{Command, Output};

fn attnamer(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attnamer"))
        .args(args)
        .current_dir(dir)
        .env_remove("ATTNAMER_SERVER")
        .env_remove("ATTNAMER_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn knowledge_line(id: &str, face: &str, voice: &str) -> String {
    format!(r#"{{"face_id":"{id}","voice_id":"{id}","face":{face},"voice":{voice}}}"#)
}

#[test]
fn gen_enroll_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // generate a tiny zero-noise population with a matched-only manifest
    let out = attnamer(
        &[
            "gen",
            "--ids",
            "3",
            "--shots",
            "2",
            "--d-face",
            "8",
            "--d-voice",
            "8",
            "--queries-per-id",
            "2",
            "--ratio",
            "1:0",
            "--seed",
            "11",
            "--knowledge",
            "k.jsonl",
            "--manifest",
            "m.jsonl",
        ],
        root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["n_shots"], 6);
    assert!(root.join("k.jsonl").exists());
    assert!(root.join("m.jsonl").exists());

    // evaluate: one JSON document on stdout, perfect naming at zero noise
    let out = attnamer(
        &[
            "eval",
            "--knowledge",
            "k.jsonl",
            "--manifest",
            "m.jsonl",
            "--tau",
            "0.25",
            "--csv",
            "report.csv",
        ],
        root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["sna"], 100.0);
    assert_eq!(report["method"], "att");
    let csv = std::fs::read_to_string(root.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("method,"));

    // enroll two more shots for a new identity
    std::fs::write(
        root.join("add.jsonl"),
        format!(
            "{}\n{}\n",
            knowledge_line("newcomer", "[1.0,0,0,0,0,0,0,0]", "[0,1.0,0,0,0,0,0,0]"),
            knowledge_line("newcomer", "[0.9,0.1,0,0,0,0,0,0]", "[0.1,0.9,0,0,0,0,0,0]")
        ),
    )
    .unwrap();
    let out = attnamer(
        &["enroll", "--knowledge", "k.jsonl", "--additions", "add.jsonl"],
        root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["n_identities"], 4);
    assert_eq!(summary["n_shots"], 8);
}

#[test]
fn enroll_malformed_line_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let original = format!(
        "{}\n",
        knowledge_line("a", "[1.0,0.0]", "[0.0,1.0]")
    );
    std::fs::write(root.join("k.jsonl"), &original).unwrap();
    std::fs::write(
        root.join("add.jsonl"),
        format!("{}\n{{oops\n", knowledge_line("b", "[0.0,1.0]", "[1.0,0.0]")),
    )
    .unwrap();

    let out = attnamer(
        &["enroll", "--knowledge", "k.jsonl", "--additions", "add.jsonl"],
        root,
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
    // atomicity: the knowledge file is untouched
    assert_eq!(std::fs::read_to_string(root.join("k.jsonl")).unwrap(), original);
}

#[test]
fn enroll_creates_missing_knowledge_file() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(
        root.join("add.jsonl"),
        format!("{}\n", knowledge_line("solo", "[1.0,0.0]", "[0.0,1.0]")),
    )
    .unwrap();
    let out = attnamer(
        &["enroll", "--knowledge", "fresh.jsonl", "--additions", "add.jsonl"],
        root,
    );
    assert!(out.status.success());
    assert!(root.join("fresh.jsonl").exists());
}

#[test]
fn eval_on_empty_store_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("k.jsonl"), "").unwrap();
    std::fs::write(
        root.join("m.jsonl"),
        "{\"window\":0,\"t_start\":0.0,\"faces\":[[1.0,0.0]],\"voice\":[1.0,0.0],\"gt\":null}\n",
    )
    .unwrap();
    let out = attnamer(
        &["eval", "--knowledge", "k.jsonl", "--manifest", "m.jsonl"],
        root,
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_window_factor_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(
        root.join("k.jsonl"),
        format!("{}\n", knowledge_line("a", "[1.0,0.0]", "[0.0,1.0]")),
    )
    .unwrap();
    let mut manifest = String::new();
    for i in 0..18 {
        manifest.push_str(&format!(
            "{{\"window\":{i},\"t_start\":{},\"faces\":[[1.0,0.0]],\"voice\":[0.0,1.0],\"gt\":\"a\"}}\n",
            i as f64 * 0.5
        ));
    }
    std::fs::write(root.join("m.jsonl"), manifest).unwrap();
    let out = attnamer(
        &[
            "eval",
            "--knowledge",
            "k.jsonl",
            "--manifest",
            "m.jsonl",
            "--factor",
            "6",
        ],
        root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["aggregated_windows"], 3);
    assert_eq!(report["base_windows"], 18);
}

#[test]
fn eval_gradient_method_reports_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(
        root.join("k.jsonl"),
        format!(
            "{}\n{}\n",
            knowledge_line("a", "[1.0,0.0]", "[1.0,0.0]"),
            knowledge_line("b", "[0.0,1.0]", "[0.0,1.0]")
        ),
    )
    .unwrap();
    std::fs::write(
        root.join("m.jsonl"),
        "{\"window\":0,\"t_start\":0.0,\"faces\":[[1.0,0.0]],\"voice\":[1.0,0.0],\"gt\":\"a\"}\n",
    )
    .unwrap();
    let out = attnamer(
        &[
            "eval",
            "--knowledge",
            "k.jsonl",
            "--manifest",
            "m.jsonl",
            "--method",
            "tfs",
            "--seed",
            "4",
        ],
        root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["method"], "tfs");
    assert!(report["trained_epochs"].as_u64().unwrap() > 0);
}

#[test]
fn bench_streams_csv_and_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let out = attnamer(
        &[
            "bench",
            "--grid-ids",
            "2,3",
            "--grid-shots",
            "2",
            "--methods",
            "att",
            "--d-face",
            "8",
            "--d-voice",
            "8",
            "--noise",
            "0.05",
            "--queries-per-id",
            "2",
            "--seed",
            "3",
            "--csv",
            "grid.csv",
        ],
        root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("method,n_ids,shots,mpa"));
    assert!(lines[1].starts_with("att,2,2,"));
    assert_eq!(std::fs::read_to_string(root.join("grid.csv")).unwrap(), text);
}

#[test]
fn external_server_mode() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let handle = attnamer_service::spawn_ephemeral().unwrap();

    std::fs::write(
        root.join("add.jsonl"),
        format!("{}\n", knowledge_line("remote", "[1.0,0.0]", "[0.0,1.0]")),
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_attnamer"))
        .args([
            "enroll",
            "--knowledge",
            "k.jsonl",
            "--additions",
            "add.jsonl",
            "--server",
            &handle.base_url(),
        ])
        .current_dir(root)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("k.jsonl").exists());
}

#[test]
fn unknown_method_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(
        root.join("k.jsonl"),
        format!("{}\n", knowledge_line("a", "[1.0,0.0]", "[0.0,1.0]")),
    )
    .unwrap();
    std::fs::write(
        root.join("m.jsonl"),
        "{\"window\":0,\"t_start\":0.0,\"faces\":[],\"voice\":[1.0,0.0],\"gt\":null}\n",
    )
    .unwrap();
    let out = attnamer(
        &[
            "eval",
            "--knowledge",
            "k.jsonl",
            "--manifest",
            "m.jsonl",
            "--method",
            "sgd",
        ],
        root,
    );
    assert_eq!(out.status.code(), Some(1));
}
