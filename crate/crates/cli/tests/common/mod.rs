#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn sfpca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfpca")).args(args).output().expect("binary runs")
}

/// Runs the binary, panics with its stderr on failure and returns the
/// printed run directory.
pub fn sfpca_ok<S: AsRef<str>>(args: &[S]) -> String {
    let args: Vec<&str> = args.iter().map(|s| s.as_ref()).collect();
    let out = sfpca(&args);
    assert!(
        out.status.success(),
        "sfpca {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap().trim().to_string()
}

/// Writes `<root>/<name>.toml` with its own output directory; `body` may
/// start with top-level keys.
pub fn write_config(root: &Path, name: &str, body: &str) -> PathBuf {
    let path = root.join(format!("{name}.toml"));
    let out = root.join(format!("out-{name}"));
    std::fs::write(&path, format!("output_dir = {:?}\n{body}", out.display().to_string())).unwrap();
    path
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}
