//! Helpers shared by the integration test targets: spawning the CLI binary
//! and snapshotting output trees for byte-level comparison.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

/// Command handle for the compiled `cbtlearn` binary.
pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cbtlearn"))
}

/// Runs the binary with `args` and returns the finished output.
pub fn run(args: &[&str]) -> Output {
    bin()
        .args(args)
        .output()
        .expect("failed to spawn the cbtlearn binary")
}

/// Runs the binary and asserts a particular exit code, echoing the captured
/// streams on mismatch so failures are diagnosable.
pub fn run_expect(args: &[&str], code: i32) -> Output {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code} from {args:?}\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Maps every file under `dir` (recursively) from its relative path to its
/// raw bytes, so two output trees can be compared with `assert_eq!`.
pub fn tree_map(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    collect(dir, dir, &mut out);
    out
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    let entries =
        std::fs::read_dir(dir).unwrap_or_else(|e| panic!("read_dir {}: {e}", dir.display()));
    for entry in entries {
        let path = entry.expect("dir entry").path();
        if path.is_dir() {
            collect(root, &path, out);
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("path under root")
                .to_string_lossy()
                .into_owned();
            let bytes =
                std::fs::read(&path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
            out.insert(rel, bytes);
        }
    }
}

/// A small run configuration that keeps every pipeline stage cheap while
/// still exercising it: two folds of a 12-region population, a handful of
/// training epochs, short recall sequences, and the recurrent update rule
/// so reservoir states actually depend on the template.
pub const TINY_CONFIG: &str = r#"
[population]
n_subjects = 8
n_regions = 12
n_views = 2
classes = 2
noise_sigma = 0.1

[dgn]
epochs = 8
subset_size = 4
layer_dims = [12, 6]

[esn]
n_transient = 12
leakage = 0.8
update_rule = "leaky"

[coopt]
readout_refit_every = 3

[recall]
lag_min = 1
lag_max = 3
train_frames = 8
test_frames = 3
image_rows = 3
image_cols = 3

[run]
folds = 2
seed = 11
"#;

/// Writes the tiny configuration into `dir` and returns its path as a
/// string for argument lists.
pub fn write_tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY_CONFIG).expect("write tiny config");
    path.to_string_lossy().into_owned()
}
