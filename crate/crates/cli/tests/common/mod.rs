#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_polyknn");

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn polyknn")
}

/// Runs and asserts success, returning stdout.
pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "polyknn {args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().expect("exit code")
}

/// A small seeded toy corpus in `dir/toy`.
pub fn toy(dir: &Path, seed: u64) -> PathBuf {
    ok(
        dir,
        &["gen-toy", "--out", "toy", "--seed", &seed.to_string(), "--langs", "xa,xb,xc,xd", "--pool", "600", "--train-min", "100", "--train-max", "400", "--test", "30"],
    );
    dir.join("toy")
}

pub fn build(dir: &Path, lang: &str, extra: &[&str]) {
    let src = format!("toy/train-{lang}.{lang}");
    let tgt = format!("toy/train-{lang}.en");
    let out = format!("{lang}.kds");
    let dump = format!("{lang}.rdmp");
    let mut args = vec![
        "build", "--src", &src, "--tgt", &tgt, "--lang", lang, "--vocab", "toy/vocab.txt", "--out", &out, "--dump", &dump,
    ];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

/// Model flags for a model trained on `lang`'s corpus.
pub fn model_args(lang: &str) -> Vec<String> {
    vec![
        "--vocab".into(),
        "toy/vocab.txt".into(),
        "--train-src".into(),
        format!("toy/train-{lang}.{lang}"),
        "--train-tgt".into(),
        format!("toy/train-{lang}.en"),
    ]
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
