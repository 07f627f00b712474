mod common;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use codenames_core::dataset::{write_records, GameRecord, Split};
use codenames_core::game::{generate_board, Board};
use codenames_core::harness::{run_experiment, ExperimentConfig};
use codenames_core::agents::GiverKind;
use common::*;
use serde_json::Value;

fn codenames(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codenames"))
        .args(args)
        .env_remove("CODENAMES_WORDPOOL")
        .env_remove("CODENAMES_EMBEDDINGS")
        .env_remove("CODENAMES_HEADS_DIR")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A nonzero exit whose error is one JSON line, the last on stderr (log
/// lines may precede it).
fn error_kind(out: &Output) -> String {
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let last = stderr.lines().last().unwrap_or_default();
    let v: Value = serde_json::from_str(last).unwrap_or_else(|e| panic!("{e}: {stderr}"));
    assert!(v["message"].is_string());
    v["error"].as_str().unwrap().to_string()
}

/// Simulated games stored as records, half with graduate givers.
fn write_game_records(w: &World) -> std::path::PathBuf {
    let cfg = ExperimentConfig {
        giver_kind: GiverKind::Rsa,
        giver_cultures: vec!["a".into()],
        guesser_culture: "b".into(),
        board_count: 24,
        runs: 1,
        ..Default::default()
    };
    let out = run_experiment(&cfg, &w.store, &w.pool(), None).unwrap();
    let records: Vec<GameRecord> = out
        .games
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let split = if i % 6 == 5 { Split::Test } else { Split::Train };
            let mut r = GameRecord::from_transcript(format!("g{i}"), &g.transcript, split);
            let edu = if i % 2 == 0 { "graduate" } else { "highschool" };
            r.guesser_demographics.insert("education".into(), edu.into());
            r
        })
        .collect();
    let path = w.path("records.jsonl");
    write_records(&records, fs::File::create(&path).unwrap()).unwrap();
    path
}

#[test]
fn gen_boards_is_deterministic_and_matches_the_core() {
    let w = world();
    let args = ["gen-boards", "--wordpool", p(&w.wordpool), "--count", "7", "--base-seed", "3"];
    let first = ok(&codenames(&args));
    assert_eq!(first, ok(&codenames(&args)));
    let boards: Vec<Board> = serde_json::from_str(&first).unwrap();
    let expected: Vec<Board> = (3..10).map(|s| generate_board(&w.pool(), s).unwrap()).collect();
    assert_eq!(boards, expected);

    let file = w.path("boards.json");
    let out = Command::new(env!("CARGO_BIN_EXE_codenames"))
        .args(["gen-boards", "--count", "7", "--base-seed", "3", "--out", p(&file)])
        .env("CODENAMES_WORDPOOL", &w.wordpool)
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(fs::read_to_string(file).unwrap(), first);
}

#[test]
fn train_writes_a_head_and_loss_curve_for_a_split() {
    let w = world();
    let records = write_game_records(&w);
    let head = w.path("graduate.json");
    let stdout = ok(&codenames(&[
        "train",
        "--embeddings",
        p(&w.embeddings),
        "--records",
        p(&records),
        "--out",
        p(&head),
        "--epochs",
        "3",
        "--split",
        "education=graduate",
    ]));
    let summary: Value = serde_json::from_str(&stdout).unwrap();
    // The 12 even-numbered games are graduate and all in the train split.
    assert_eq!(summary["records"], 12);
    assert!(summary["examples"].as_u64().unwrap() > 0);
    let loaded = codenames_core::lexicon::LinearHead::load(&head).unwrap();
    assert_eq!(loaded.d_in(), DIM);
    let curve = fs::read_to_string(w.path("graduate.json.loss.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4);

    let out = codenames(&[
        "train",
        "--embeddings",
        p(&w.embeddings),
        "--records",
        p(&records),
        "--out",
        p(&head),
        "--split",
        "shoe_size=9",
    ]);
    assert_eq!(error_kind(&out), "training");
}

#[test]
fn eval_reports_win_rate_and_transcripts() {
    let w = world();
    let transcripts = w.path("games.jsonl");
    let guesser = w.heads_dir.join("b.json");
    let stdout = ok(&codenames(&[
        "eval",
        "--embeddings",
        p(&w.embeddings),
        "--heads-dir",
        p(&w.heads_dir),
        "--wordpool",
        p(&w.wordpool),
        "--giver",
        "rsa_c3",
        "--cultures",
        "a,b",
        "--guesser-head",
        p(&guesser),
        "--boards",
        "6",
        "--runs",
        "2",
        "--transcripts",
        p(&transcripts),
    ]));
    let report: Value = serde_json::from_str(&stdout).unwrap();
    let r = &report["report"];
    assert_eq!(r["games"].as_u64().unwrap() + r["errored"].as_u64().unwrap(), 12);
    assert_eq!(r["runs"], 2);
    assert_eq!(report["config"]["giver_kind"], "rsa_c3");
    assert_eq!(report["config"]["guesser_culture"], "b");
    assert_eq!(fs::read_to_string(&transcripts).unwrap().lines().count(), 12);

    let again = ok(&codenames(&[
        "eval",
        "--embeddings",
        p(&w.embeddings),
        "--heads-dir",
        p(&w.heads_dir),
        "--wordpool",
        p(&w.wordpool),
        "--giver",
        "rsa_c3",
        "--cultures",
        "a,b",
        "--guesser-head",
        p(&guesser),
        "--boards",
        "6",
        "--runs",
        "2",
        "--sequential",
    ]));
    let again: Value = serde_json::from_str(&again).unwrap();
    assert_eq!(again["report"], report["report"]);
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let w = world();
    let stdout = ok(&codenames(&[
        "sweep",
        "--embeddings",
        p(&w.embeddings),
        "--heads-dir",
        p(&w.heads_dir),
        "--wordpool",
        p(&w.wordpool),
        "--guesser-culture",
        "a",
        "--boards",
        "4",
        "--runs",
        "1",
        "--alphas",
        "0.1,2.0",
        "--deltas",
        "0.1",
    ]));
    let mut reader = csv::Reader::from_reader(stdout.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    let header = reader.headers().unwrap().clone();
    let rate = header.iter().position(|h| h == "rate").unwrap();
    // Alpha does not move the RSA argmax.
    assert_eq!(rows[0][rate], rows[1][rate]);
}

#[test]
fn replay_metrics_reports_alignment() {
    let w = world();
    let records = write_game_records(&w);
    let base = [
        "replay-metrics",
        "--embeddings",
        p(&w.embeddings),
        "--heads-dir",
        p(&w.heads_dir),
        "--records",
        p(&records),
        "--cultures",
        "a",
        "--guesser-culture",
        "b",
    ];
    let report: Value = serde_json::from_str(&ok(&codenames(&base))).unwrap();
    // The records were played by exactly these agents.
    for m in ["clue_accuracy", "giver_target_accuracy", "guess_accuracy"] {
        assert_eq!(report[m]["value"], 1.0, "{m}: {report}");
    }
    let mut args = base.to_vec();
    args.extend(["--dataset-split", "test", "--csv"]);
    let csv_out = ok(&codenames(&args));
    assert_eq!(csv_out.lines().count(), 2);
    assert!(csv_out.starts_with("giver_target_accuracy,"));
}

#[test]
fn analyze_reports_probe_pca_and_clusters() {
    let w = world();
    let features = w.path("features.csv");
    let mut f = fs::File::create(&features).unwrap();
    writeln!(f, "x,y,z,group").unwrap();
    for i in 0..60 {
        let (label, shift) = if i % 2 == 0 { ("left", -3.0) } else { ("right", 3.0) };
        let t = i as f64 / 60.0;
        writeln!(f, "{},{},{},{label}", shift + t, (i % 7) as f64 * 0.1, t * 0.5).unwrap();
    }
    drop(f);
    let scatter = w.path("scatter.csv");
    let stdout = ok(&codenames(&[
        "analyze",
        "--features",
        p(&features),
        "--k",
        "2",
        "--components",
        "2",
        "--scatter",
        p(&scatter),
    ]));
    let report: Value = serde_json::from_str(&stdout).unwrap();
    assert!(report["probe_accuracy"].as_f64().unwrap() > 0.95);
    assert_eq!(report["majority_accuracy"], 0.5);
    assert_eq!(report["kmeans"]["cluster_sizes"], serde_json::json!([30, 30]));
    assert_eq!(fs::read_to_string(scatter).unwrap().lines().count(), 61);

    assert_eq!(error_kind(&codenames(&["analyze", "--features", p(&features)])), "usage");
}

#[test]
fn errors_are_one_json_line() {
    let w = world();
    let out = codenames(&["gen-boards", "--wordpool", p(&w.path("missing.txt"))]);
    assert_eq!(error_kind(&out), "io");
    let out = codenames(&[
        "eval",
        "--embeddings",
        p(&w.embeddings),
        "--wordpool",
        p(&w.wordpool),
        "--cultures",
        "nobody",
    ]);
    assert_eq!(error_kind(&out), "harness");
    let out = codenames(&[
        "eval",
        "--embeddings",
        p(&w.embeddings),
        "--wordpool",
        p(&w.wordpool),
        "--guesser",
        "external",
    ]);
    assert_eq!(error_kind(&out), "usage");
}

#[test]
fn play_tty_runs_a_game_from_stdin() {
    let w = world();
    let board = generate_board(&w.pool(), 5).unwrap();
    let avoid = board.words_with_role(codenames_core::game::Role::Avoid)[0].clone();
    let mut child = Command::new(env!("CARGO_BIN_EXE_codenames"))
        .args([
            "play-tty",
            "--embeddings",
            p(&w.embeddings),
            "--heads-dir",
            p(&w.heads_dir),
            "--wordpool",
            p(&w.wordpool),
            "--cultures",
            "a,b",
            "--seed",
            "5",
        ])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    writeln!(child.stdin.take().unwrap(), "notaword\n{avoid}").unwrap();
    let out = child.wait_with_output().unwrap();
    let text = ok(&out);
    assert!(text.contains("clue: "));
    assert!(text.contains("is not on the board"));
    assert!(text.contains(&format!("{avoid} was avoid")));
    assert!(text.trim_end().ends_with("status: lost"), "{text}");
}

/// A guesser service that always names the first unrevealed word.
fn spawn_guesser() -> String {
    use axum::routing::post;
    use axum::Json;
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let app = axum::Router::new().route(
                "/guess",
                post(|Json(v): Json<Value>| async move { Json(serde_json::json!({ "guess": v["unrevealed"][0] })) }),
            );
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

#[test]
fn external_guesser_over_http() {
    let w = world();
    let base = spawn_guesser();
    let eval = |url: String| {
        codenames(&[
            "eval",
            "--embeddings",
            p(&w.embeddings),
            "--wordpool",
            p(&w.wordpool),
            "--guesser",
            "external",
            "--guesser-url",
            &url,
            "--boards",
            "3",
            "--runs",
            "1",
        ])
    };
    let report: Value = serde_json::from_str(&ok(&eval(format!("{base}/guess")))).unwrap();
    assert_eq!(report["report"]["games"], 3);
    assert_eq!(report["report"]["errored"], 0);

    // Every game errors against a missing endpoint, leaving nothing to rate.
    assert_eq!(error_kind(&eval(format!("{base}/missing"))), "harness");
}
