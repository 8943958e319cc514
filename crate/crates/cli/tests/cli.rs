use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use smc_core::pipeline::{write_artifact, Preset, Provenance, RunConfig};
use smc_core::specimen::write_records;

const TINY: &str = r#"
[run]
configurations = ["B"]
realizations_per_configuration = 1
[stack]
bundle_count = 1500
[dmn]
depth = 3
training_samples = 30
test_samples = 6
max_epochs = 10
patience_checks = 2
validation_steps = 6
[specimens]
per_plate = 8
load_steps = 15
"#;

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("smc-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn chain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smc-chain")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p.to_string_lossy().into_owned()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = scratch("cfg");
    let out = dir.join("out");
    let out = out.to_str().unwrap();
    assert_eq!(code(&chain(&["--stage", "polish", "--out-dir", out])), 2);
    assert_eq!(code(&chain(&["--preset", "huge", "--out-dir", out])), 2);
    assert_eq!(code(&chain(&["--plot", "pie-chart", "--out-dir", out])), 2);
    let bad = dir.join("bad.toml");
    fs::write(&bad, "[stack]\nbundle_length = 3.0\n").unwrap();
    assert_eq!(code(&chain(&["--config", bad.to_str().unwrap(), "--out-dir", out])), 2);
    assert_eq!(code(&chain(&["--config", dir.join("absent.toml").to_str().unwrap(), "--out-dir", out])), 2);
    assert!(!Path::new(out).exists());
}

#[test]
fn print_config_round_trips() {
    let o = chain(&["--print-config", "--preset", "paper-scale"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let parsed = RunConfig::from_toml(&text, &RunConfig::preset(Preset::Desk)).unwrap();
    assert_eq!(parsed, RunConfig::preset(Preset::PaperScale));
}

#[test]
fn missing_upstream_and_mixed_hashes_exit_with_code_3() {
    let dir = scratch("upstream");
    let cfg = tiny_config(&dir);
    let out = dir.join("out");
    let out = out.to_str().unwrap();
    assert_eq!(code(&chain(&["--config", &cfg, "--stage", "mold", "--out-dir", out])), 3);
    assert_eq!(code(&chain(&["--config", &cfg, "--stage", "generate-stack", "--out-dir", out])), 0);
    let o = chain(&["--config", &cfg, "--stage", "mold", "--seed-offset", "5", "--out-dir", out]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("config hash mismatch"));
    assert_eq!(code(&chain(&["--config", &cfg, "--stage", "mold", "--out-dir", out])), 0);
}

#[test]
fn uq_report_refuses_empty_database() {
    let dir = scratch("empty");
    let cfg_path = tiny_config(&dir);
    let cfg = RunConfig::from_toml(TINY, &RunConfig::preset(Preset::Desk)).unwrap();
    let out = dir.join("out");
    write_artifact(&out.join("specimens/database.tsv"), &Provenance::new("specimens", &cfg.hash()), &write_records(&[])).unwrap();
    let o = chain(&["--config", &cfg_path, "--stage", "uq-report", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));
    assert!(!out.join("uq").exists());
    assert!(!out.join("plots").exists());
}

#[test]
fn tiny_pipeline_is_complete_and_reproducible() {
    let dir = scratch("e2e");
    let cfg = tiny_config(&dir);
    let (a, b) = (dir.join("a"), dir.join("b"));
    let oa = chain(&["--config", &cfg, "--out-dir", a.to_str().unwrap()]);
    assert_eq!(code(&oa), 0, "{}", String::from_utf8_lossy(&oa.stderr));
    assert_eq!(code(&chain(&["--config", &cfg, "--workers", "2", "--out-dir", b.to_str().unwrap()])), 0);
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), fb.len());
    for ((pa, ca), (pb, cb)) in fa.iter().zip(&fb) {
        assert_eq!(pa, pb);
        assert!(ca == cb, "{} differs between runs", pa.display());
        assert!(ca.starts_with(b"#@ format: smc-chain artifact v1\n"), "{} lacks provenance", pa.display());
    }
    let db = fs::read_to_string(a.join("specimens/database.tsv")).unwrap();
    let rows = db.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(rows, 8);
    let bands = fs::read_to_string(a.join("plots/stress-bands.tsv")).unwrap();
    assert!(bands.contains("shape\tcase\tstrain\tmean_MPa\tlower_3sigma_MPa\tupper_3sigma_MPa"));
    let tga = fs::read_to_string(a.join("plots/tga-scatter.tsv")).unwrap();
    let row = tga.lines().find(|l| l.starts_with("B\t")).unwrap();
    assert_eq!(row.split('\t').count(), 2 + 15 + 1);
    let o = chain(&["--config", &cfg, "--plot", "size-scaling", "--out-dir", a.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(a.join("plots/size-scaling.tsv")).unwrap(), fs::read(b.join("plots/size-scaling.tsv")).unwrap());
}
