use std::path::Path;
use std::process::{Command, Output};

fn matm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matm")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = r#"{
  "d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 24,
  "total_steps": 6, "warmup_steps": 2, "batch_size": 2, "checkpoint_interval": 3, "log_interval": 2,
  "n_steps": 2,
  "duration.d_model": 16, "duration.n_layers": 1, "duration.n_heads": 2, "duration.d_ff": 24,
  "duration.total_steps": 5, "duration.warmup_steps": 1, "duration.batch_size": 2
}"#;

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let world = root.join("world.json");
    std::fs::write(&world, r#"{"n_utterances": 8}"#).unwrap();
    let cfg = root.join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    let corpus = root.join("corpus");
    let run = root.join("base");
    let dur = root.join("dur");

    ok(matm(&["synthdata", "--spec", s(&world), "--out", s(&corpus), "--held-out", "2"]));
    for split in ["train", "dev", "test"] {
        assert!(corpus.join(format!("{split}.jsonl")).exists());
    }

    let train = ["--config", s(&cfg), "train", "--corpus", s(&corpus), "--variant", "base", "--out", s(&run), "--quiet"];
    ok(matm(&train));
    assert!(run.join("step-0000003.ckpt").exists());
    assert!(run.join("latest.ckpt").exists());
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("step,lr,audio_ce,semantic,total"));
    assert_eq!(metrics.lines().count(), 4);
    // A finished run resumes to a no-op and keeps its log.
    ok(matm(&train));
    assert_eq!(std::fs::read_to_string(run.join("metrics.csv")).unwrap(), metrics);

    ok(matm(&["--config", s(&cfg), "train-duration", "--corpus", s(&corpus), "--out", s(&dur)]));
    let ckpt = run.join("latest.ckpt");
    let dur_ckpt = dur.join("latest.ckpt");

    let sample = root.join("sample.jsonl");
    ok(matm(&[
        "--config", s(&cfg), "sample", "--ckpt", s(&ckpt), "--corpus", s(&corpus), "--text", "1 2 3", "--speaker", "1",
        "--frames", "12", "--out", s(&sample),
    ]));
    let record: serde_json::Value = serde_json::from_str(std::fs::read_to_string(&sample).unwrap().trim()).unwrap();
    assert_eq!(record["tokens"].as_array().unwrap().len(), 4);
    assert_eq!(record["tokens"][0].as_array().unwrap().len(), 12);
    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("sample.jsonl.trace.json")).unwrap()).unwrap();
    assert_eq!(trace["steps"].as_array().unwrap().len(), 2);

    ok(matm(&[
        "--config", s(&cfg), "sample", "--ckpt", s(&ckpt), "--corpus", s(&corpus), "--text", "4,5", "--speaker", "0",
        "--use-duration-predictor", "--duration-ckpt", s(&dur_ckpt), "--out", s(&root.join("pred.jsonl")),
    ]));

    let report = root.join("report");
    ok(matm(&[
        "--config", s(&cfg), "eval", "--corpus", s(&corpus), "--ckpt", s(&ckpt), "--duration-ckpt", s(&dur_ckpt),
        "--limit", "2", "--out", s(&report),
    ]));
    let csv = std::fs::read_to_string(report.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(report.join("utterances.jsonl").exists());

    let bench = root.join("bench");
    ok(matm(&["--config", s(&cfg), "bench", "--runs", "1", "--steps", "1", "--out", s(&bench)]));
}

#[test]
fn validation_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let bad_cfg = root.join("bad.json");
    std::fs::write(&bad_cfg, r#"{"no_such_key": 1}"#).unwrap();
    let out = matm(&["--config", s(&bad_cfg), "synthdata", "--out", s(&root.join("c"))]);
    assert_eq!(code(&out), 2);

    let neg = root.join("neg.json");
    std::fs::write(&neg, r#"{"cfg_dropout_p": 1.5}"#).unwrap();
    assert_eq!(code(&matm(&["--config", s(&neg), "synthdata", "--out", s(&root.join("c"))])), 2);

    assert_eq!(code(&matm(&["train", "--corpus", "x", "--variant", "nope", "--out", "y"])), 2);

    let corpus = root.join("corpus");
    let world = root.join("world.json");
    std::fs::write(&world, r#"{"n_utterances": 4}"#).unwrap();
    ok(matm(&["synthdata", "--spec", s(&world), "--out", s(&corpus), "--held-out", "1"]));
    let train = corpus.join("train.jsonl");
    let text = std::fs::read_to_string(&train).unwrap();
    std::fs::write(&train, text.replacen("\"speaker_id\":", "\"speaker_id\":99,\"x\":", 1)).unwrap();
    let out = matm(&["train", "--corpus", s(&corpus), "--variant", "base", "--out", s(&root.join("r"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn runtime_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let out = matm(&["train", "--corpus", s(&missing), "--variant", "base", "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&out), 1);
    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let out = matm(&[
        "sample", "--ckpt", s(&garbage), "--corpus", s(&missing), "--text", "1", "--speaker", "0", "--frames", "4",
        "--out", s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&out), 1);
}
