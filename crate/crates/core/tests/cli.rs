use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cosinet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON object")
}

const TSV: &str = "QuestionID\tQuestion\tDocumentID\tDocumentTitle\tSentenceID\tSentence\tLabel
Q1\twhat is the capital of france ?\tD1\tFrance\tD1-0\tfrance is a large country .\t0
Q1\twhat is the capital of france ?\tD1\tFrance\tD1-1\tparis is the capital of france .\t1
Q1\twhat is the capital of france ?\tD1\tFrance\tD1-2\tthe river runs in the city .\t0
Q2\twho wrote the book ?\tD2\tBook\tD2-0\tthe book is known .\t0
Q2\twho wrote the book ?\tD2\tBook\tD2-1\tthe author wrote a novel .\t1
Q3\twhere is nowhere ?\tD3\tNone\tD3-0\tnothing here .\t0
";

fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let tsv = dir.join("toy.tsv");
    fs::write(&tsv, TSV).unwrap();
    let words = [
        "what", "is", "the", "capital", "of", "france", "?", "a", "large", "country", ".", "paris", "river", "runs",
        "in", "city", "who", "wrote", "book", "known", "author", "novel",
    ];
    let mut emb = format!("{} 4\n", words.len());
    for (i, w) in words.iter().enumerate() {
        let v: Vec<String> = (0..4).map(|k| format!("{:.3}", ((i * 7 + k * 3) % 11) as f64 / 5.0 - 1.0)).collect();
        emb.push_str(&format!("/c/en/{w} {}\n", v.join(" ")));
    }
    let emb_path = dir.join("emb.txt");
    fs::write(&emb_path, emb).unwrap();
    (tsv, emb_path)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ingest_is_idempotent_and_jsonl_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (tsv, _) = fixture(dir.path());
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let c = dir.path().join("c.jsonl");
    let report = ok_json(&["ingest", "--dataset", "wikiqa", "--input", s(&tsv), "--output", s(&a)]);
    assert_eq!(report["questions"], 3);
    assert_eq!(report["sentences"], 6);
    assert_eq!(report["kept_groups"], 2);
    assert_eq!(report["dropped_groups"], 1);
    ok_json(&["ingest", "--dataset", "wikiqa", "--input", s(&tsv), "--output", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let again = ok_json(&["ingest", "--dataset", "jsonl", "--input", s(&a), "--output", s(&c)]);
    assert_eq!(again["kept_groups"], 2);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn baselines_report_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (tsv, _) = fixture(dir.path());
    let rr = ok_json(&["baseline", "--method", "rr", "--data", s(&tsv)]);
    assert_eq!(rr["method"], "rr");
    assert_eq!(rr["map"], 50.0);
    assert_eq!(rr["n_questions"], 2);
    let wo = ok_json(&["baseline", "--method", "wo", "--data", s(&tsv)]);
    // Q2 ties at overlap 2 and keeps document order, so only Q1 is right at 1
    assert_eq!(wo["p_at_1"], 50.0);

    let same = dir.path().join("same.jsonl");
    fs::write(
        &same,
        r#"{"question_id":"s","question":"red fox jumps","candidates":[{"text":"a dog","label":0},{"text":"red fox jumps","label":1},{"text":"fox","label":0}]}"#,
    )
    .unwrap();
    let wo = ok_json(&["baseline", "--method", "wo_rr", "--data", s(&same)]);
    assert_eq!(wo["map"], 100.0);
}

#[test]
fn train_eval_predict() {
    let dir = tempfile::tempdir().unwrap();
    let (tsv, emb) = fixture(dir.path());
    let model = dir.path().join("m.bin");
    let config = dir.path().join("c.toml");
    fs::write(&config, "conv_hidden = 6\nkernel_width = 2\nepochs = 2\nmax_lr = 0.01\n").unwrap();
    let common = [
        "train", "--train", s(&tsv), "--dev", s(&tsv), "--embeddings", s(&emb), "--out", s(&model), "--config", s(&config),
        "--embedding-dim", "4", "--context", "birnn", "--seed", "3",
    ];
    let report = ok_json(&common);
    assert_eq!(report["steps"], 4);
    assert_eq!(report["epochs"], 2);
    assert_eq!(report["context"], "birnn");
    assert!(report["param_count"].as_u64().unwrap() > 0);
    assert!(report["train_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["dev"]["n_questions"], 2);
    let first = fs::read(&model).unwrap();
    ok_json(&common);
    assert_eq!(fs::read(&model).unwrap(), first, "fixed seed gives a byte-identical model");

    let metrics = ok_json(&["eval", "--model", s(&model), "--data", s(&tsv)]);
    assert_eq!(metrics["map"], report["dev"]["map"]);
    let with_emb = ok_json(&["eval", "--model", s(&model), "--data", s(&tsv), "--embeddings", s(&emb)]);
    assert_eq!(with_emb["map"], metrics["map"]);

    let one = dir.path().join("one.jsonl");
    fs::write(
        &one,
        r#"{"question_id":"x","question":"who wrote the book ?","candidates":[{"text":"the author","label":0},{"text":"a novel","label":1},{"text":"paris","label":0}]}"#,
    )
    .unwrap();
    let scores = dir.path().join("scores.tsv");
    let summary = ok_json(&["predict", "--model", s(&model), "--data", s(&one), "--scores-out", s(&scores)]);
    assert_eq!(summary["scores"], 3);
    let text = fs::read_to_string(&scores).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "question_id\trank\tscore");
    assert_eq!(lines.len(), 4);
    for (i, l) in lines[1..].iter().enumerate() {
        let f: Vec<&str> = l.split('\t').collect();
        assert_eq!(f[0], "x");
        assert_eq!(f[1], (i + 1).to_string());
        assert!(f[2].parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn params_for_paper_configuration() {
    assert_eq!(ok_json(&["params", "--context", "none"])["param_count"], 904_201);
    assert_eq!(ok_json(&["params", "--context", "birnn"])["param_count"], 1_129_201);
}

#[test]
fn errors_are_single_line_and_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let (tsv, emb) = fixture(dir.path());
    let cases: Vec<Vec<String>> = vec![
        vec!["baseline".into(), "--method".into(), "rr".into(), "--data".into(), "/no/such/file.tsv".into()],
        vec!["eval".into(), "--model".into(), s(&tsv).into(), "--data".into(), s(&tsv).into()],
        vec![
            "train".into(), "--train".into(), s(&tsv).into(), "--embeddings".into(), s(&emb).into(), "--out".into(),
            "/tmp/x".into(), "--loss".into(), "pointwise".into(), "--context".into(), "birnn".into(),
        ],
    ];
    for args in cases {
        let out = bin().args(&args).output().unwrap();
        assert!(!out.status.success(), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.starts_with("error: "));
        assert!(out.stdout.is_empty());
    }
}

#[test]
fn help_lists_defaults() {
    let out = run(&["train", "--help"]);
    let help = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--train", "--dev", "--embeddings", "--loss", "--context", "--epochs", "--seed", "--out", "--config", "--max-lr",
        "--batch-size",
    ] {
        assert!(help.contains(flag), "{flag}");
    }
    for default in ["[default: listwise]", "[default: none]", "[default: 3]", "[default: 0]", "[default: 64]"] {
        assert!(help.contains(default), "{default}");
    }
}
