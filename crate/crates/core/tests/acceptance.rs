//! Acceptance suite: one PASS/FAIL line per criterion. Each scenario runs through
//! the command-line entry point and reads the certificates from its manifest.
//! Failures are reported, never raised, so the target always completes.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use fpme_core::grid::make_grid;
use fpme_core::obstacle::bg_identity_check;
use serde_json::Value;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Runs one CLI invocation into `dir/<tag>` and returns its exit code and manifest.
fn fpme(dir: &Path, tag: &str, args: &[&str]) -> (i32, Value) {
    let out = dir.join(tag);
    let mut argv = vec!["fpme".to_string()];
    argv.extend(args.iter().map(|a| a.to_string()));
    argv.push("--out".into());
    argv.push(out.display().to_string());
    let code = fpme_core::cli::run(argv);
    let manifest = std::fs::read_to_string(out.join("manifest.json"))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .unwrap_or(Value::Null);
    (code, manifest)
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn csv_column(path: &Path, column: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).expect("readable csv");
    let idx = r.headers().unwrap().iter().position(|h| h == column).expect("column present");
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap_or(f64::NAN)).collect()
}

fn identity(_: &Path) -> Outcome {
    let start = Instant::now();
    let c = bg_identity_check(1.0, make_grid(2.0, 4096).unwrap()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        c.spread <= 0.01 && c.relative_error <= 0.01 && secs < 10.0,
        format!("spread {:.2e}, error vs K = {:.6} {:.2e}, {secs:.2} s", c.spread, c.oracle, c.relative_error),
    )
}

fn pme_oracle(dir: &Path) -> Outcome {
    let (code, m) = fpme(dir, "pme-limit", &["pme-limit"]);
    let c = &m["certificates"];
    let gap50 = c["dhat"].as_array().unwrap().iter().find(|r| num(&r["m"]) == 50.0).map(|r| num(&r["relative_gap"])).unwrap_or(f64::NAN);
    let lap = c["mesa_laplacian"].as_array().unwrap().iter().map(|r| num(&r["error_over_h2"])).fold(0.0, f64::max);
    let l1 = c["l1_decreasing"].as_bool() == Some(true);
    outcome(
        code == 0 && gap50 <= 0.05 && lap <= 1.0 && l1,
        format!("d̂_50 gap {gap50:.4} (≤ 0.05), ΔW error/h² {lap:.1e}, L¹ distances decreasing {l1}"),
    )
}

fn conservation(dir: &Path) -> Outcome {
    let start = Instant::now();
    let (code, m) = fpme(dir, "suite", &["evolve", "--random-pairs", "20", "--half-width", "50", "--n", "4096"]);
    let c = &m["certificates"];
    let drift = num(&c["worst_mass_drift"]);
    let contraction = num(&c["worst_contraction_excess"]);
    let comparison = num(&c["worst_comparison_excess"]);
    let benilan = num(&c["worst_benilan_margin"]);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        code == 0 && drift <= 1e-5 && contraction <= 1e-8 && comparison <= 1e-8 && benilan >= -1e-6 && secs < 300.0,
        format!(
            "mass drift {drift:.1e}, contraction excess {contraction:.1e}, comparison excess {comparison:.1e}, Bénilan margin {benilan:.1e}, {secs:.0} s"
        ),
    )
}

fn h_order(dir: &Path) -> Outcome {
    let (code, m) = fpme(
        dir,
        "h-order",
        &["evolve", "--m", "5", "--s", "0.5", "--u0", "preset:two-humps", "--dt", "0.01", "--t-end", "1", "--dt-halving"],
    );
    let ratio = num(&m["certificates"]["dt_halving"]["ratio"]);
    outcome(code == 0 && (0.4..=0.6).contains(&ratio), format!("residual ratio {ratio:.4} at dt = 0.01 → 0.005"))
}

fn barenblatt(dir: &Path) -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut worst_gap = 0.0f64;
    let mut worst_tail = 0.0f64;
    let mut failed = Vec::new();
    for m in ["2", "5", "10"] {
        for s in ["0.25", "0.5", "0.75"] {
            let (code, man) = fpme(dir, &format!("bb-{m}-{s}"), &["barenblatt", "--m", m, "--s", s, "--route", "both"]);
            let c = &man["certificates"];
            let gap = num(&c["route_gap_l1"]);
            let target = 1.0 + 2.0 * s.parse::<f64>().unwrap();
            let tail = ["fixed_point", "evolution"]
                .iter()
                .map(|r| (num(&c[r]["tail_exponent"]) - target).abs() / target)
                .fold(0.0, f64::max);
            let ok = code == 0 && gap <= 0.02 && tail <= 0.05;
            if !ok {
                failed.push(format!("({m}, {s}): gap {gap:.3}, tail {tail:.3}"));
            }
            pass &= ok;
            worst_gap = worst_gap.max(gap);
            worst_tail = worst_tail.max(tail);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 900.0;
    outcome(
        pass,
        format!("worst L¹ gap {worst_gap:.4}, worst tail deviation {worst_tail:.4}, {secs:.0} s {}", failed.join("; ")),
    )
}

fn mesa(dir: &Path) -> Outcome {
    let (code, m) = fpme(dir, "mesa", &["mesa-sweep", "--u0", "delta", "--s", "0.5", "--m-list", "5,10,20,40"]);
    let c = &m["certificates"];
    let f0 = csv_column(&dir.join("mesa").join("sweep.csv"), "f0");
    let increasing = c["f0_increasing"].as_bool() == Some(true);
    let deficit = 1.0 - f0.last().copied().unwrap_or(f64::NAN);
    let violations = c["exterior_violations"].as_u64().unwrap_or(u64::MAX);
    let radius_gap = num(&c["plateau_radius_gap"]);
    outcome(
        code == 0 && increasing && deficit <= 0.05 && violations == 0 && radius_gap <= 0.05,
        format!(
            "F(0) = {f0:.4?} increasing {increasing}, 1 - F_40(0) = {deficit:.4} (≤ 0.05), exterior violations {violations}, plateau vs obstacle radius {radius_gap:.3} (≤ 0.05)"
        ),
    )
}

fn obstacle(dir: &Path) -> Outcome {
    let (code, m) = fpme(dir, "obstacle", &["obstacle", "--s", "0.5", "--mass", "1", "--method", "both"]);
    let c = &m["certificates"];
    let gap = num(&c["cross_validation_gap"]);
    let defect = num(&c["vi"]["max_defect"]);
    let residual = num(&c["limit_equation_residual"]);
    let ladder = c["s_ladder"]["decreasing"].as_bool() == Some(true);
    outcome(
        code == 0 && gap <= 1e-3 && defect <= 1e-6 && residual <= 1e-3 && ladder,
        format!("gap {gap:.1e}, defects {defect:.1e}, limit residual {residual:.1e}, ladder decreasing {ladder}"),
    )
}

fn counterexample(dir: &Path) -> Outcome {
    let start = Instant::now();
    let (code, m) = fpme(dir, "symm", &["symm-check", "--m", "40", "--s", "0.5", "--refine"]);
    let c = &m["certificates"];
    let r = &c["report"];
    let initial = r["initial"]["relation"].as_str().unwrap_or("?").to_string();
    let stationary = r["stationary"]["relation"].as_str().unwrap_or("?").to_string();
    let w = &r["stationary"]["f_over_g"];
    let (radius, margin) = (num(&w["radius"]), num(&w["margin"]));
    let stable = c["stable_under_refinement"].as_bool() == Some(true);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        code == 0
            && initial == "less-concentrated"
            && stationary != "less-concentrated"
            && radius > 2.0
            && margin >= 1e-3
            && stable
            && secs < 600.0,
        format!(
            "initial {initial}, stationary {stationary}, witness R* = {radius:.3} margin {margin:.3}, stable under refinement {stable}, {secs:.0} s"
        ),
    )
}

fn general_data(dir: &Path) -> Outcome {
    let (code, m) = fpme(dir, "gd-double", &["mesa-sweep", "--u0", "preset:double-step", "--s", "0.5", "--m-list", "40"]);
    let row = &m["certificates"]["rows"][0];
    let sup = num(&row["sup"]);
    let inner = num(&row["inner_min"]);
    let mass = num(&row["mass_error"]);
    let tail = num(&row["tail_exponent"]);
    let (code2, m2) = fpme(dir, "gd-sub", &["mesa-sweep", "--u0", "preset:sub-unit", "--s", "0.5", "--m-list", "40"]);
    let dist = num(&m2["certificates"]["rows"][0]["distance_to_u0"]);
    outcome(
        code == 0
            && code2 == 0
            && sup <= 1.02
            && inner >= 0.98
            && mass <= 0.01
            && (tail - 2.0).abs() <= 0.2
            && dist <= 0.02,
        format!(
            "sup {sup:.4} (≤ 1.02), inner min {inner:.4} (≥ 0.98), mass error {mass:.1e}, tail {tail:.3}, sub-unit distance {dist:.1e}"
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let criteria: [(&str, fn(&Path) -> Outcome); 9] = [
        ("fractional Laplacian of the semicircle", identity),
        ("PME oracle and mesa limit", pme_oracle),
        ("conservation, contraction, comparison", conservation),
        ("initial-layer accumulator order", h_order),
        ("Barenblatt route cross-validation", barenblatt),
        ("mesa formation", mesa),
        ("obstacle cross-validation", obstacle),
        ("concentration counterexample", counterexample),
        ("general data limit", general_data),
    ];
    let mut passed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let line = match catch_unwind(AssertUnwindSafe(|| check(dir.path()))) {
            Ok(o) => {
                passed += o.pass as usize;
                format!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail)
            }
            Err(_) => format!("FAIL {name}: check panicked"),
        };
        println!("criterion {}: {line}", k + 1);
    }
    println!("acceptance: {passed}/{} criteria passed", criteria.len());
}
