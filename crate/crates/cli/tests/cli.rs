//! End-to-end tests of the `tpan` binary: the train → predict → evaluate
//! loop on a small synthetic corpus, plus the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn tpan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn write_corpus(path: &Path, rows: &[(&str, &str, &str, &str)]) {
    let mut text = String::from("ID\tTarget\tTweet\tStance\n");
    for (id, target, tweet, stance) in rows {
        text.push_str(&format!("{id}\t{target}\t{tweet}\t{stance}\n"));
    }
    std::fs::write(path, text).unwrap();
}

fn synthetic_rows() -> Vec<(String, String, String, String)> {
    let mut rows = Vec::new();
    for i in 0..4 {
        rows.push((
            format!("f{i}"),
            "Test Topic".to_string(),
            format!("wonderful great support joy blessing {i}"),
            "FAVOR".to_string(),
        ));
        rows.push((
            format!("a{i}"),
            "Test Topic".to_string(),
            format!("terrible awful oppose harm disaster {i}"),
            "AGAINST".to_string(),
        ));
        rows.push((
            format!("n{i}"),
            "Test Topic".to_string(),
            format!("schedule notes calendar agenda update {i}"),
            "NONE".to_string(),
        ));
    }
    rows
}

fn write_synthetic(path: &Path) {
    let rows = synthetic_rows();
    let refs: Vec<(&str, &str, &str, &str)> = rows
        .iter()
        .map(|(a, b, c, d)| (a.as_str(), b.as_str(), c.as_str(), d.as_str()))
        .collect();
    write_corpus(path, &refs);
}

#[test]
fn train_predict_evaluate_loop() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.tsv");
    write_synthetic(&data);
    let ckpt = dir.path().join("ckpt");

    let out = tpan(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--epochs",
        "25",
        "--lr",
        "0.01",
        "--seed",
        "7",
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "train failed: {}", stderr(&out));
    assert!(ckpt.join("manifest.json").exists());
    assert!(ckpt.join("vocab.txt").exists());
    assert!(ckpt.join("test_topic/phase1.bin").exists());

    let pred = dir.path().join("pred.tsv");
    let out = tpan(&[
        "predict",
        "--model",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "predict failed: {}", stderr(&out));
    let pred_text = std::fs::read_to_string(&pred).unwrap();
    assert_eq!(pred_text.lines().count(), 13, "header + 12 rows");
    assert!(pred_text.starts_with("ID\tTarget\tTweet\tStance\n"));

    let out = tpan(&[
        "evaluate",
        "--gold",
        data.to_str().unwrap(),
        "--pred",
        pred.to_str().unwrap(),
        "--per-target",
    ]);
    assert_eq!(exit_code(&out), 0, "evaluate failed: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("== overall (n=12) =="), "{text}");
    assert!(text.contains("overall.macro_f_fa="), "{text}");
    assert!(text.contains("target.test_topic.accuracy3="), "{text}");

    // the model overfits this corpus, so self-evaluation is perfect
    assert!(text.contains("overall.accuracy3=1.000000"), "{text}");
    assert!(text.contains("overall.macro_f_fa=1.000000"), "{text}");
}

#[test]
fn evaluate_gold_equals_pred_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("gold.tsv");
    write_synthetic(&data);
    let out = tpan(&[
        "evaluate",
        "--gold",
        data.to_str().unwrap(),
        "--pred",
        data.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("overall.macro_f_fa=1.000000"));
    assert!(text.contains("overall.accuracy3=1.000000"));
}

#[test]
fn usage_errors_exit_1() {
    // unknown flag
    let out = tpan(&["train", "--nonsense"]);
    assert_eq!(exit_code(&out), 1);
    // conflicting --target and --pooled
    let out = tpan(&[
        "train", "--data", "x.tsv", "--target", "T", "--pooled", "--out", "y",
    ]);
    assert_eq!(exit_code(&out), 1);
    // unknown subcommand
    let out = tpan(&["frobnicate"]);
    assert_eq!(exit_code(&out), 1);
    // invalid config value
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.tsv");
    write_synthetic(&data);
    let out = tpan(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--epochs",
        "0",
        "--out",
        dir.path().join("ckpt").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1, "{}", stderr(&out));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();

    // missing training file
    let out = tpan(&[
        "train",
        "--data",
        dir.path().join("absent.tsv").to_str().unwrap(),
        "--out",
        dir.path().join("ckpt").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);

    // malformed stance value
    let bad = dir.path().join("bad.tsv");
    write_corpus(&bad, &[("1", "T", "hello world", "MAYBE")]);
    let out = tpan(&[
        "train",
        "--data",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("ckpt").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("MAYBE"), "{}", stderr(&out));

    // unknown --target
    let data = dir.path().join("train.tsv");
    write_synthetic(&data);
    let out = tpan(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--target",
        "No Such Topic",
        "--out",
        dir.path().join("ckpt").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("Test Topic"), "{}", stderr(&out));

    // predict without a checkpoint
    let out = tpan(&[
        "predict",
        "--model",
        dir.path().join("no_ckpt").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("pred.tsv").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn evaluate_rejects_malformed_and_misaligned_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.tsv");
    write_synthetic(&gold);

    // malformed stance in predictions
    let bad_pred = dir.path().join("bad_pred.tsv");
    write_corpus(&bad_pred, &[("f0", "Test Topic", "text", "KINDA")]);
    let out = tpan(&[
        "evaluate",
        "--gold",
        gold.to_str().unwrap(),
        "--pred",
        bad_pred.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);

    // length mismatch
    let short = dir.path().join("short.tsv");
    write_corpus(&short, &[("f0", "Test Topic", "text", "FAVOR")]);
    let out = tpan(&[
        "evaluate",
        "--gold",
        gold.to_str().unwrap(),
        "--pred",
        short.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);

    // shuffled ids
    let mut rows = synthetic_rows();
    rows.swap(0, 5);
    let refs: Vec<(&str, &str, &str, &str)> = rows
        .iter()
        .map(|(a, b, c, d)| (a.as_str(), b.as_str(), c.as_str(), d.as_str()))
        .collect();
    let swapped = dir.path().join("swapped.tsv");
    write_corpus(&swapped, &refs);
    let out = tpan(&[
        "evaluate",
        "--gold",
        gold.to_str().unwrap(),
        "--pred",
        swapped.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn gradcheck_passes_and_prints_lines() {
    let out = tpan(&["gradcheck", "--seed", "3"]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("PASS op.matmul"), "{text}");
    assert!(text.contains("PASS model.phase1"), "{text}");
    assert!(text.contains("PASS model.phase2"), "{text}");
    assert!(!text.contains("FAIL"), "{text}");
}

#[test]
fn pooled_and_no_attention_flags_work() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.tsv");
    write_synthetic(&data);
    let ckpt = dir.path().join("ckpt_pooled");
    let out = tpan(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--pooled",
        "--no-attention",
        "--clean",
        "--optimizer",
        "sgd",
        "--lr",
        "0.05",
        "--epochs",
        "3",
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    assert!(ckpt.join("pooled/phase1.bin").exists());
    let manifest = std::fs::read_to_string(ckpt.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"mode\": \"pooled\""), "{manifest}");
    assert!(manifest.contains("\"attention\": false"), "{manifest}");
    assert!(manifest.contains("\"cleaning\": true"), "{manifest}");
    assert!(manifest.contains("\"Sgd\""), "{manifest}");
}

#[test]
fn pretrained_embeddings_flag_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.tsv");
    write_synthetic(&data);

    // vectors must match the default embedding dimension (100)
    let vecs = dir.path().join("vecs.txt");
    let dims: Vec<String> = (0..100).map(|i| format!("{:.1}", 0.1 + i as f64 * 0.01)).collect();
    std::fs::write(&vecs, format!("wonderful {}\n", dims.join(" "))).unwrap();

    let ckpt = dir.path().join("ckpt");
    let out = tpan(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--epochs",
        "1",
        "--embeddings",
        vecs.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));

    // wrong dimension -> data error
    std::fs::write(&vecs, "wonderful 1.0 2.0\n").unwrap();
    let out = tpan(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--epochs",
        "1",
        "--embeddings",
        vecs.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2, "{}", stderr(&out));
}
