#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use trajrisk_cli::config::RunConfig;

/// A model small enough to train in seconds.
pub fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.model.hidden = 8;
    c.model.hrg.node_out = 8;
    c.model.tcn_channels = [4, 4];
    c.model.patterns.pedestrian_k = 2;
    c.model.patterns.car_k = 2;
    c.model.patterns.rider_k = 2;
    c.train.epochs = 2;
    c.train.batch_size = 16;
    c.train.lr = 1e-2;
    c.simulate.scenes = 3;
    c.predict.h = 4;
    c.predict.svg = true;
    c
}

pub fn write_config(dir: &Path, c: &RunConfig) {
    std::fs::write(dir.join("run.toml"), c.to_toml().unwrap()).unwrap();
}

pub fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajrisk"))
        .current_dir(dir)
        .arg("--config")
        .arg("run.toml")
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

/// Runs `args` and panics with stderr unless the exit code is `code`.
pub fn cli_ok(dir: &Path, args: &[&str]) {
    expect_code(dir, args, 0);
}

pub fn expect_code(dir: &Path, args: &[&str], code: i32) -> Output {
    let out = cli(dir, args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Every file under `dir` except the config, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, d: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().is_some_and(|n| n != "run.toml") {
                let key = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(key, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub const PIPELINE: [&str; 6] = ["simulate", "train", "predict", "evaluate", "risk-matrix", "plot"];
