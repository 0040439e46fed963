//! End-to-end subcommand runs on a small guide.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

const SMALL: &str = "[geometry]\nl1 = 1.3\nl2 = 2.1\n\n[evanescent]\ncutoff_factor = 16.0\n\n\
                     [montecarlo]\nrealizations = 64\ncheckpoints = [0.0, 0.01]\n";

fn waveguide(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_waveguide")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn setup(text: &str) -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, text).unwrap();
    let cfg = path.display().to_string();
    (dir, cfg)
}

fn run(sub: &str, cfg: &str, out: &Path, extra: &[&str]) -> Value {
    let mut args = vec![sub, "--config", cfg, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    waveguide(&args);
    serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(str::to_string).collect();
    let rows = reader.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect();
    (header, rows)
}

#[test]
fn modes_on_the_default_guide_lists_64_groups() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    waveguide(&["modes", "--out", out.to_str().unwrap()]);
    let (header, rows) = read_csv(&out.join("wavenumbers.csv"));
    assert_eq!(header, ["j", "j1", "j2", "lambda", "beta", "multiplicity"]);
    assert_eq!(rows.len(), 64);
    let beta: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(beta.windows(2).all(|w| w[0] >= w[1]));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["N"], 64);
    assert_eq!(summary["status"], "ok");
    assert_eq!(summary["subcommand"], "modes");
    for key in ["version", "config_hash", "config", "timings"] {
        assert!(!summary[key].is_null(), "{key}");
    }
}

#[test]
fn transport_artifacts_are_byte_identical_on_rerun() {
    let (dir, cfg) = setup(SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = run("transport", &cfg, &a, &[]);
    run("transport", &cfg, &b, &[]);
    assert_eq!(first["status"], "ok");
    for key in ["N", "L_eq", "max_S", "ratio"] {
        assert!(!first[key].is_null(), "{key}");
    }
    let names = [
        "mean_free_paths.csv",
        "transport_spectrum.csv",
        "equipartition.csv",
        "equipartition_distance.csv",
        "power_trajectory.csv",
        "depolarization.csv",
    ];
    for name in names {
        let x = std::fs::read(a.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let (header, rows) = read_csv(&a.join("equipartition_distance.csv"));
    assert_eq!(header, ["Z", "distance"]);
    let d: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(d.last().unwrap() < d.first().unwrap());
}

#[test]
fn cached_tensor_is_reused_and_allows_no_assemble() {
    let (dir, cfg) = setup(SMALL);
    let out = dir.path().join("out");
    let first = run("moments", &cfg, &out, &[]);
    assert_eq!(first["basis"]["tensor_from_cache"], false);
    let cache = PathBuf::from(first["basis"]["tensor_cache"].as_str().unwrap());
    assert!(cache.exists());
    let q1 = std::fs::read(out.join("moments_Qj.csv")).unwrap();
    let second = run("moments", &cfg, &out, &["--no-assemble"]);
    assert_eq!(second["basis"]["tensor_from_cache"], true);
    assert_eq!(second["config_hash"], first["config_hash"]);
    assert_eq!(std::fs::read(out.join("moments_Qj.csv")).unwrap(), q1);
}

#[test]
fn montecarlo_seed_override_changes_the_estimates() {
    let (dir, cfg) = setup(SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = run("montecarlo", &cfg, &a, &["--seed", "11", "--threads", "2"]);
    let second = run("montecarlo", &cfg, &b, &["--seed", "12"]);
    assert_eq!(first["montecarlo"]["seed"], 11);
    assert_eq!(second["montecarlo"]["seed"], 12);
    assert_ne!(first["config_hash"], second["config_hash"]);
    for key in ["pass", "max_abs_z", "threshold", "max_mean_error", "max_power_error"] {
        assert!(!first["montecarlo"][key].is_null(), "{key}");
    }
    let name = "mc_mean_amplitudes.csv";
    assert_ne!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
    let (header, rows) = read_csv(&a.join("mc_comparison.csv"));
    assert!(header.iter().any(|h| h == "zscore"), "{header:?}");
    assert!(!rows.is_empty());
}
