#![allow(dead_code)]

#[allow(unused_imports)]
#[path = "../../src/test_support.rs"]
mod test_support;

pub use test_support::*;

use std::collections::BTreeMap;
use std::path::Path;

/// Every file under `dir` (non-recursive) with its bytes.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

pub fn scenario_path(name: &str) -> String {
    format!("{}/scenarios/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// Runs the CLI in-process with `honeynet` prepended.
pub fn run_cli(args: &[&str]) -> i32 {
    let mut argv = vec!["honeynet".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    honeynet_smdp::cli::run(argv)
}
