//! Helpers shared by the CLI test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

pub fn shimsense(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shimsense"))
        .args(args)
        .current_dir(dir)
        .env_remove("SHIMSENSE_SEED")
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = shimsense(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Relative path to SHA-256 for every file under `root`.
pub fn tree_hashes(root: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let digest = Sha256::digest(fs::read(&path).unwrap());
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), hex::encode(digest));
            }
        }
    }
    out
}

pub fn small_synth(dir: &Path, seed: &str) {
    ok(
        dir,
        &[
            "--seed", seed, "synth", "--n", "90", "--m", "12", "--rank", "3", "--out", "g.csv", "--truth", "t.json",
            "--segments", "2", "--segmentation-out", "seg.json",
        ],
    );
}

pub fn scenario_synth(dir: &Path) {
    ok(dir, &["synth", "--n", "600", "--m", "40", "--rank", "5", "--seed", "7", "--out", "g.csv", "--truth", "t.json"]);
}

pub fn scenario_decompose_train(dir: &Path) {
    small_synth(dir, "11");
    ok(dir, &["decompose", "--input", "g.csv", "--out-dir", "dec", "--center"]);
    ok(dir, &["train", "--input", "g.csv", "--segmentation", "seg.json", "--out", "model"]);
}

pub fn scenario_crossval_predict(dir: &Path) {
    small_synth(dir, "5");
    ok(
        dir,
        &[
            "--seed", "9", "crossval", "--input", "g.csv", "--segmentation", "seg.json", "--reference", "t.json",
            "--out", "r.json", "--histogram-csv", "h.csv",
        ],
    );
    ok(dir, &["report", "--input", "r.json", "--format", "csv", "--out", "summary.csv"]);
    ok(dir, &["report", "--input", "r.json", "--format", "table", "--out", "summary.txt"]);
    ok(dir, &["train", "--input", "g.csv", "--out", "model"]);
    ok(dir, &["predict", "--model", "model", "--measurements", "g.csv", "--out", "p.csv", "--diagnostics", "pd.json"]);
}
