//! Command-line behaviour: exit codes, output bundles and settings precedence.

use std::path::Path;
use std::process::Command;

use fpme_core::cli::run;
use fpme_core::grid::read_profile_csv;
use serde_json::Value;

fn fpme(args: &[&str], out: &Path) -> i32 {
    let mut argv = vec!["fpme".to_string()];
    argv.extend(args.iter().map(|a| a.to_string()));
    argv.push("--out".into());
    argv.push(out.display().to_string());
    run(argv)
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fpme"))
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(fpme(&["barenblatt", "--m", "-3", "--s", "0.5"], &out), 2);
    assert_eq!(fpme(&["barenblatt", "--s", "0.5"], &out), 2);
    assert_eq!(fpme(&["evolve", "--m", "2", "--s", "0.5", "--u0", "preset:no-such"], &out), 2);
    assert_eq!(fpme(&["obstacle", "--s", "0.3", "--method", "vi"], &out), 2);
    assert_eq!(fpme(&["evolve", "--bogus"], &out), 2);
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn binary_exit_codes() {
    let status = bin().args(["barenblatt", "--m", "-3", "--s", "0.5"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = bin().args(["no-such-command"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = bin().arg("--help").output().unwrap().status;
    assert_eq!(status.code(), Some(0));
}

#[test]
fn non_convergence_exits_with_3_and_keeps_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nc");
    let code = fpme(
        &["mesa-sweep", "--u0", "preset:double-step", "--s", "0.5", "--m-list", "40", "--t-budget", "1e-6", "--n", "1024"],
        &out,
    );
    assert_eq!(code, 3);
    let m = manifest(&out);
    assert_eq!(m["status"], "non-convergence");
    assert_eq!(m["exit_code"], 3);
    assert!(!m["certificates"]["residual_history"].as_array().unwrap().is_empty());
    assert!(out.join("u0.csv").exists());
}

#[test]
fn obstacle_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("obstacle");
    assert_eq!(fpme(&["obstacle", "--s", "0.5", "--mass", "1", "--method", "both"], &out), 0);
    let c: Value = serde_json::from_str(&std::fs::read_to_string(out.join("obstacle.json")).unwrap()).unwrap();
    assert!((c["K"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!(c["cross_validation_gap"].as_f64().unwrap() <= 1e-3);
    for name in ["G", "P", "F", "G_vi", "P_vi", "F_vi"] {
        assert!(out.join(format!("{name}.csv")).exists(), "{name}");
    }
}

#[test]
fn evolve_example_writes_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("evolve");
    assert_eq!(fpme(&["evolve", "--m", "40", "--s", "0.5", "--u0", "preset:double-step"], &out), 0);
    let mut r = csv::Reader::from_path(out.join("diagnostics.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    for col in ["t", "mass", "l1", "l2", "linf", "min", "benilan_margin", "h_residual"] {
        assert!(headers.iter().any(|h| h == col), "{col}");
    }
    assert!(r.records().count() > 10);
    let m = manifest(&out);
    assert_eq!(m["status"], "ok");
    assert!(m["certificates"]["mass_drift"].as_f64().unwrap() <= 1e-5);
    let listed: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|o| o["path"].as_str().unwrap()).collect();
    assert!(listed.contains(&"u_final.csv") && listed.contains(&"diagnostics.csv"));
}

#[test]
fn profile_csv_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e");
    assert_eq!(fpme(&["evolve", "--m", "3", "--s", "0.5", "--u0", "two-humps", "--n", "512", "--t-end", "0.1"], &out), 0);
    let text = std::fs::read_to_string(out.join("u_final.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("x,value"));
    let side: Value = serde_json::from_str(&std::fs::read_to_string(out.join("u_final.json")).unwrap()).unwrap();
    assert!(side.is_object());
    let p = read_profile_csv::<f64>(&out.join("u_final.csv")).unwrap();
    assert_eq!(p.grid.len(), 512);

    // A written profile is accepted as initial data and hashed in the manifest.
    let again = dir.path().join("again");
    let path = out.join("u_final.csv").display().to_string();
    assert_eq!(fpme(&["evolve", "--m", "3", "--s", "0.5", "--u0", &path, "--t-end", "0.05"], &again), 0);
    let m = manifest(&again);
    assert_eq!(m["input_hashes"].as_object().unwrap().len(), 1);
}

#[test]
fn single_thread_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["symm-check", "--m", "20", "--s", "0.5", "--n", "1024", "--L", "25", "--threads", "1"];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(fpme(&args, &a), 0);
    assert_eq!(fpme(&args, &b), 0);
    let hashes = |p: &Path| -> Vec<(String, String)> {
        manifest(p)["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|o| (o["path"].as_str().unwrap().to_string(), o["sha256"].as_str().unwrap().to_string()))
            .collect()
    };
    assert_eq!(hashes(&a), hashes(&b));
    assert_eq!(manifest(&a)["threads"], 1);
}

#[test]
fn flags_override_file_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "s = 0.5\nt_end = 0.05\n[evolve]\nm = 3.0\nn = 256\nu0 = \"preset:two-humps\"\n").unwrap();
    let out = dir.path().join("o");
    let cfg_s = cfg.display().to_string();
    assert_eq!(fpme(&["evolve", "--config", &cfg_s, "--n", "512"], &out), 0);
    let c = &manifest(&out)["config"];
    assert_eq!(c["n"], 512);
    assert_eq!(c["m"], 3.0);
    assert_eq!(c["t_end"], 0.05);
    assert_eq!(c["half_width"], 50.0);

    std::fs::write(&cfg, "typo_key = 1\n").unwrap();
    assert_eq!(fpme(&["evolve", "--config", &cfg_s], &dir.path().join("bad")), 2);
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .env("FPME_OUT_DIR", dir.path())
        .args(["pme-limit", "--m-list", "5,10"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(dir.path().join("pme-limit").join("manifest.json").exists());
    assert!(dir.path().join("pme-limit").join("limit.csv").exists());
}
