#![allow(dead_code)]

pub mod stub;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use featsel_core::seeding::content_digest;
use featsel_core::{FeatureCatalog, FeatureRecord};

pub fn featsel() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_featsel"));
    cmd.env_remove("MOFA_API_KEY").env_remove("RUST_LOG");
    cmd
}

pub fn run<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    featsel().args(args).output().expect("binary runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// The JSON error record (last stderr line) of a failed run.
pub fn error_record(out: &Output) -> serde_json::Value {
    let text = stderr(out);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("error record on stderr");
    serde_json::from_str(line).expect("record is JSON")
}

/// `n` features `f00..`, importance decreasing with index, four groups.
pub fn write_catalog(dir: &Path, n: usize) -> PathBuf {
    let records = (0..n)
        .map(|i| {
            FeatureRecord::new(format!("f{i:02}"), format!("feature number {i}"))
                .with_group(format!("g{}", i % 4))
                .with_number("importance", 1.0 - i as f64 / n as f64)
        })
        .collect();
    let path = dir.join("catalog.jsonl");
    std::fs::write(&path, FeatureCatalog::new(records).unwrap().to_jsonl()).unwrap();
    path
}

/// Every output listed in `dir/manifest.json` still hashes to its recorded digest.
pub fn assert_manifest_verifies(dir: &Path) {
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for out in outputs {
        let bytes = std::fs::read(dir.join(out["path"].as_str().unwrap())).unwrap();
        assert_eq!(out["sha256"].as_str().unwrap(), content_digest(&bytes), "{}", out["path"]);
        assert_eq!(out["bytes"].as_u64().unwrap(), bytes.len() as u64);
    }
    for input in manifest["inputs"].as_array().unwrap() {
        let bytes = std::fs::read(input["path"].as_str().unwrap()).unwrap();
        assert_eq!(input["sha256"].as_str().unwrap(), content_digest(&bytes));
    }
}

pub fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}
