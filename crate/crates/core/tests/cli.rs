mod common;

use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use wtformer_lab::signal::read_wav;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wtformer-lab"))
        .args(args)
        .env_remove(wtformer_lab::cli::CONFIG_ENV)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn digest(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = lab(&["simulate", "--corpus", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
}

#[test]
fn missing_flag_and_bad_value_exit_2() {
    assert_eq!(code(&lab(&["simulate", "--out", "x"])), 2);
    assert_eq!(code(&lab(&["enhance", "--data", "x", "--out", "y", "--method", "magic"])), 2);
    assert_eq!(code(&lab(&["frobnicate"])), 2);
}

#[test]
fn print_config_reflects_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[dataset]\nseed = 11\n[enhance]\nmethod = \"ti-mvdr\"\n").unwrap();
    let out = lab(&["--config", s(&cfg), "--print-config", "simulate", "--seed", "5"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let parsed = wtformer_lab::cli::RunConfig::from_toml(&text).unwrap();
    assert_eq!(parsed.dataset.seed, 5);
    assert_eq!(parsed.enhance.method, wtformer_lab::cli::Method::TiMvdr);
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[scene]\nroom_depth = 3.0\n").unwrap();
    let out = lab(&["--config", s(&cfg), "gradcheck", "--block", "loss-sigma"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("room_depth"));
}

#[test]
fn gradcheck_passes() {
    let out = lab(&["gradcheck", "--block", "si-snr", "--block", "loss-sigma", "--block", "depthwise"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(String::from_utf8_lossy(&out.stdout).matches("PASS").count(), 3);
}

#[test]
fn describe_prints_the_total() {
    let out = lab(&["describe"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("980770"));
}

#[test]
fn simulate_enhance_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    common::write_corpus(&corpus, 20);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let run = lab(&["simulate", "--corpus", s(&corpus), "--out", s(out), "--seed", "3", "--anechoic", "--noise", "white"]);
        assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
        let stdout = String::from_utf8(run.stdout).unwrap();
        assert!(stdout.contains("train: 18") && stdout.contains("val: 1") && stdout.contains("test: 1"), "{stdout}");
    }
    assert_eq!(digest(&a.join("manifest.jsonl")), digest(&b.join("manifest.jsonl")));

    let enh = dir.path().join("enh");
    let run = lab(&["enhance", "--data", s(&a), "--out", s(&enh), "--method", "identity", "--split", "test"]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let rows = wtformer_lab::scene::read_manifest(&a.join("manifest.jsonl")).unwrap();
    let test = rows.iter().find(|r| r.split.as_str() == "test").unwrap();
    let mix = read_wav(a.join("test").join(format!("{}_mix.wav", test.id))).unwrap();
    let out = read_wav(enh.join("test").join(format!("{}_enh.wav", test.id))).unwrap();
    assert_eq!(mix.samples(), out.samples());

    let csv = dir.path().join("scores.csv");
    let run = lab(&["evaluate", "--enhanced", s(&enh), "--reference", s(&a), "--csv", s(&csv), "--split", "test"]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], wtformer_lab::cli::EVAL_CSV_HEADER);
    assert_eq!(lines.len(), 3, "{text}");
    assert!(lines[1].starts_with(&test.id));
    assert!(lines[2].starts_with("mean"));
    assert!(lines[1].split(',').all(|f| !f.is_empty()));

    // Evaluating the whole dataset against a test-only enhancement leaves
    // unpaired files, which is a check failure.
    let run = lab(&["evaluate", "--enhanced", s(&enh), "--reference", s(&a), "--csv", s(&csv)]);
    assert_eq!(code(&run), 1);
}
