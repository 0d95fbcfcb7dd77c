//! Experiment runner: one subcommand per experiment, TOML config files and
//! reproducible output bundles (`manifest.json` plus CSV files).
//!
//! Settings resolve in three layers: built-in defaults, then the config file
//! (top-level keys, then a table named after the subcommand), then flags.
//! Exit codes: 0 success, 2 configuration error, 3 non-convergence or a failed
//! numerical certificate, 1 other failures.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fpme_solver::{check_benilan, conservation_suite, evolve, h_residual, SolverConfig, TimeStep};
use crate::fracops::Exterior;
use crate::grid::{make_grid, read_profile_csv, write_profile_csv, Grid, Profile};
use crate::mesa::{general_data_limit, mesa_sweep, LimitOptions};
use crate::obstacle::{
    bg_identity_check, check_invariants, cross_validation_gap, explicit_solution, mesa_distance_ladder, regularity_probe,
    vi_solve, ViMethod, ViOptions,
};
use crate::pme_reference::{d_infinity, mesa_laplacian_check, pme_dhat, pme_limit_convergence_check, pme_mesa_limit, pme_profile, PmeParams};
use crate::presets::{preset, PRESET_NAMES};
use crate::selfsim::{
    exponents, overlap_l1_gap, profile_fixed_point, profile_residuals, profile_via_evolution, EvolutionOptions,
    ProfileOptions, SelfSimilarTriple,
};
use crate::symmetrization::{concentration_curves, control_run, counterexample_run, CounterexampleRun};

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "FPME_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "fpme", version, about = "Fractional porous medium equation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Output directory [default: $FPME_OUT_DIR/<subcommand>, else out/<subcommand>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form Barenblatt profiles of the standard PME and their mesa limit.
    PmeLimit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: PmeLimitArgs,
    },
    /// Fractional Barenblatt profile by Newton solve and/or time evolution.
    Barenblatt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: BarenblattArgs,
    },
    /// Time evolution from initial data.
    Evolve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: EvolveArgs,
    },
    /// Large-m sweep of Barenblatt profiles (u0 = delta) or of stationary states for general data.
    MesaSweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: MesaSweepArgs,
    },
    /// Limit obstacle problem: explicit solution and complementarity solver.
    Obstacle {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: ObstacleArgs,
    },
    /// Concentration comparison before and after the large-m flow.
    SymmCheck {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: SymmArgs,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::PmeLimit { .. } => "pme-limit",
            Command::Barenblatt { .. } => "barenblatt",
            Command::Evolve { .. } => "evolve",
            Command::MesaSweep { .. } => "mesa-sweep",
            Command::Obstacle { .. } => "obstacle",
            Command::SymmCheck { .. } => "symm-check",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::PmeLimit { common, .. }
            | Command::Barenblatt { common, .. }
            | Command::Evolve { common, .. }
            | Command::MesaSweep { common, .. }
            | Command::Obstacle { common, .. }
            | Command::SymmCheck { common, .. } => common,
        }
    }
}

// Flag structs: every field optional so that only given flags override the file.

#[derive(Args, Debug, Serialize)]
struct PmeLimitArgs {
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    m_list: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mass: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    dhat_m_list: Option<Vec<f64>>,
    /// Spacing for the discrete Laplacian check of the mesa pressure.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    h: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    #[arg(long = "half-width", alias = "L")]
    #[serde(skip_serializing_if = "Option::is_none")]
    half_width: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PmeLimitConfig {
    m_list: Vec<f64>,
    mass: f64,
    dhat_m_list: Vec<f64>,
    h: f64,
    t: f64,
    half_width: f64,
    n: usize,
}

impl Default for PmeLimitConfig {
    fn default() -> Self {
        Self {
            m_list: vec![5.0, 10.0, 20.0, 40.0],
            mass: 2.0,
            dhat_m_list: vec![5.0, 10.0, 20.0, 50.0],
            h: 0.01,
            t: 1.0,
            half_width: 3.0,
            n: 1024,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct BarenblattArgs {
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    s: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mass: Option<f64>,
    /// fixed-point, evolution or both.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    route: Option<String>,
    #[arg(long = "half-width", alias = "L")]
    #[serde(skip_serializing_if = "Option::is_none")]
    half_width: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    evolution_half_width: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    evolution_n: Option<usize>,
    /// Read-out time; defaults to the time at which the profile has spread by
    /// evolution-half-width / (2 half-width).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_star: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_ratio: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    certificate_tol: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BarenblattConfig {
    m: Option<f64>,
    s: Option<f64>,
    mass: f64,
    route: String,
    half_width: f64,
    n: usize,
    evolution_half_width: f64,
    evolution_n: usize,
    t_star: Option<f64>,
    max_ratio: f64,
    certificate_tol: f64,
}

impl Default for BarenblattConfig {
    fn default() -> Self {
        Self {
            m: None,
            s: None,
            mass: 1.0,
            route: "fixed-point".into(),
            half_width: 25.0,
            n: 1024,
            evolution_half_width: 400.0,
            evolution_n: 16384,
            t_star: None,
            max_ratio: 0.05,
            certificate_tol: 0.01,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct EvolveArgs {
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    s: Option<f64>,
    /// `preset:<name>`, a preset name, or a profile CSV path.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    u0: Option<String>,
    #[arg(long = "half-width", alias = "L")]
    #[serde(skip_serializing_if = "Option::is_none")]
    half_width: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_end: Option<f64>,
    /// Fixed time step; adaptive stepping when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt0: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_ratio: Option<f64>,
    /// zero-extension or tail-compensated.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    exterior: Option<Exterior>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    snapshots: Option<Vec<f64>>,
    /// Repeat the run with dt/2 and report the h residual ratio (needs --dt).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt_halving: Option<bool>,
    /// Run the invariant suite on this many random ordered data pairs instead of u0.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    random_pairs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl clap::ValueEnum for Exterior {
    fn value_variants<'a>() -> &'a [Self] {
        &[Exterior::ZeroExtension, Exterior::TailCompensated, Exterior::Auto]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            Exterior::ZeroExtension => "zero-extension",
            Exterior::TailCompensated => "tail-compensated",
            Exterior::Auto => "auto",
        }))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvolveConfig {
    m: Option<f64>,
    s: Option<f64>,
    u0: Option<String>,
    half_width: f64,
    n: usize,
    t_end: f64,
    dt: Option<f64>,
    dt0: f64,
    dt_max: f64,
    max_ratio: f64,
    exterior: Exterior,
    snapshots: Vec<f64>,
    dt_halving: bool,
    random_pairs: Option<usize>,
    seed: u64,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            m: None,
            s: None,
            u0: None,
            half_width: 50.0,
            n: 4096,
            t_end: 1.0,
            dt: None,
            dt0: 1e-10,
            dt_max: 0.05,
            max_ratio: 0.2,
            exterior: Exterior::TailCompensated,
            snapshots: Vec::new(),
            dt_halving: false,
            random_pairs: None,
            seed: 20240601,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct MesaSweepArgs {
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    m_list: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    s: Option<f64>,
    /// `delta` sweeps Barenblatt profiles; anything else is evolved to stationarity.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    u0: Option<String>,
    #[arg(long = "half-width", alias = "L")]
    #[serde(skip_serializing_if = "Option::is_none")]
    half_width: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    /// Relative tolerance of the exterior bound.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_budget: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    stop_factor: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MesaSweepConfig {
    m_list: Vec<f64>,
    s: Option<f64>,
    u0: String,
    /// Defaults to 25 for the Barenblatt sweep and 50 for general data.
    half_width: Option<f64>,
    /// Defaults to 1024 for the Barenblatt sweep and 4096 for general data.
    n: Option<usize>,
    tol: f64,
    t_budget: f64,
    stop_factor: f64,
}

impl Default for MesaSweepConfig {
    fn default() -> Self {
        let lim = LimitOptions::default();
        Self {
            m_list: vec![5.0, 10.0, 20.0, 40.0],
            s: None,
            u0: "delta".into(),
            half_width: None,
            n: None,
            tol: 1e-6,
            t_budget: lim.t_budget,
            stop_factor: lim.stop_factor,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct ObstacleArgs {
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    s: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mass: Option<f64>,
    /// explicit, vi or both.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<String>,
    #[arg(long = "half-width", alias = "L")]
    #[serde(skip_serializing_if = "Option::is_none")]
    half_width: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    /// active-set or psor.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    vi_method: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    omega: Option<f64>,
    /// Obstacle constant for the solver (canonical gauge); derived from the mass when absent.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    s_ladder: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ObstacleConfig {
    s: Option<f64>,
    mass: f64,
    method: String,
    half_width: f64,
    n: usize,
    vi_method: String,
    omega: f64,
    c: Option<f64>,
    s_ladder: Vec<f64>,
}

impl Default for ObstacleConfig {
    fn default() -> Self {
        Self {
            s: None,
            mass: 1.0,
            method: "both".into(),
            half_width: 4.0,
            n: 4096,
            vi_method: "active-set".into(),
            omega: 1.5,
            c: None,
            s_ladder: vec![0.7, 0.85, 0.95],
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct SymmArgs {
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    s: Option<f64>,
    #[arg(long = "half-width", alias = "L")]
    #[serde(skip_serializing_if = "Option::is_none")]
    half_width: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    /// Repeat on a grid with twice the nodes.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    refine: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_budget: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    stop_factor: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SymmConfig {
    m: Option<f64>,
    s: Option<f64>,
    half_width: f64,
    n: usize,
    refine: bool,
    t_budget: f64,
    stop_factor: f64,
}

impl Default for SymmConfig {
    fn default() -> Self {
        let lim = LimitOptions::default();
        Self { m: None, s: None, half_width: 50.0, n: 4096, refine: false, t_budget: lim.t_budget, stop_factor: lim.stop_factor }
    }
}

/// Everything recorded about one invocation.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub tool_version: String,
    pub input_hashes: BTreeMap<String, String>,
    pub threads: Option<usize>,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputFile>,
    pub certificates: Value,
    pub status: String,
    pub exit_code: i32,
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Output directory plus the list of files written into it.
struct Bundle {
    dir: PathBuf,
    files: Vec<String>,
}

impl Bundle {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn profile(&mut self, name: &str, f: &Profile<f64>) -> Result<()> {
        let path = self.dir.join(format!("{name}.csv"));
        write_profile_csv(f, &path)?;
        self.files.push(format!("{name}.csv"));
        self.files.push(format!("{name}.json"));
        Ok(())
    }

    fn rows<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.dir.join(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        fs::write(self.dir.join(name), serde_json::to_string_pretty(value)?)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn listing(&self) -> Vec<OutputFile> {
        self.files
            .iter()
            .map(|f| OutputFile {
                path: f.clone(),
                sha256: fs::read(self.dir.join(f)).map(|b| sha256_hex(&b)).unwrap_or_default(),
            })
            .collect()
    }
}

/// Shallow overlay of `top` onto `base` (both JSON objects).
fn overlay(base: &mut Value, top: Value) {
    if let (Value::Object(b), Value::Object(t)) = (base, top) {
        for (k, v) in t {
            b.insert(k, v);
        }
    }
}

/// Defaults, then the config file, then the flags.
fn resolve<C, A>(section: &str, file: Option<&Path>, flags: &A, hashes: &mut BTreeMap<String, String>) -> Result<(C, Value)>
where
    C: Default + Serialize + DeserializeOwned,
    A: Serialize,
{
    let mut merged = serde_json::to_value(C::default())?;
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        hashes.insert(path.display().to_string(), sha256_hex(text.as_bytes()));
        let mut table: toml::Table =
            toml::from_str(&text).map_err(|e| Error::config(format!("invalid config {}: {e}", path.display())))?;
        let scoped = table.remove(section);
        let top = serde_json::to_value(&table)?;
        overlay(&mut merged, top);
        if let Some(scoped) = scoped {
            if !scoped.is_table() {
                return Err(Error::config(format!("config key {section} must be a table")));
            }
            overlay(&mut merged, serde_json::to_value(&scoped)?);
        }
    }
    overlay(&mut merged, serde_json::to_value(flags)?);
    let config: C = serde_json::from_value(merged).map_err(|e| Error::config(format!("invalid {section} settings: {e}")))?;
    let resolved = serde_json::to_value(&config)?;
    Ok((config, resolved))
}

fn required(v: Option<f64>, name: &str) -> Result<f64> {
    v.ok_or_else(|| Error::config(format!("--{name} is required (flag or config file)")))
}

/// Parses `preset:<name>`, a bare preset name, or a CSV path.
fn load_u0(spec: &str, grid: Grid<f64>, hashes: &mut BTreeMap<String, String>) -> Result<Profile<f64>> {
    let name = spec.strip_prefix("preset:").unwrap_or(spec);
    if PRESET_NAMES.contains(&name) || spec.starts_with("preset:") {
        return preset(name, grid);
    }
    let path = Path::new(spec.strip_prefix("file:").unwrap_or(spec));
    if !path.exists() {
        return Err(Error::config(format!(
            "u0 {spec:?} is neither a preset ({}) nor an existing file",
            PRESET_NAMES.join(", ")
        )));
    }
    hashes.insert(path.display().to_string(), sha256_hex(&fs::read(path)?));
    read_profile_csv(path).map_err(|e| Error::config(format!("cannot read u0 from {}: {e}", path.display())))
}

/// What a subcommand hands back for the manifest.
struct Outcome {
    config: Value,
    certificates: Value,
}

/// Entry point shared by the binary and the tests. Returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let name = cli.command.name();
    let common = cli.command.common().clone();
    let out = common.out.clone().unwrap_or_else(|| {
        std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out")).join(name)
    });
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(common.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return 1;
        }
    };
    let start = Instant::now();
    let mut hashes = BTreeMap::new();
    let mut bundle = None;
    let result = pool.install(|| execute(&cli.command, &common, &out, &mut bundle, &mut hashes));
    let wall = start.elapsed().as_secs_f64();
    let (code, status, error, config, certificates) = match result {
        Ok(o) => (0, "ok", None, o.config, o.certificates),
        Err((e, config)) => {
            let code = e.exit_code();
            eprintln!("error: {e}");
            let certs = match &e {
                Error::NonConvergence { history, .. } => json!({ "residual_history": history }),
                _ => Value::Null,
            };
            let status = match code {
                2 => "config-error",
                3 => "non-convergence",
                _ => "error",
            };
            (code, status, Some(e.to_string()), config, certs)
        }
    };
    // Configuration errors leave no bundle behind; other failures keep partial diagnostics.
    if code == 2 {
        return code;
    }
    let bundle = match bundle {
        Some(b) => b,
        None => match Bundle::new(out.clone()) {
            Ok(b) => b,
            Err(e) => {
                eprintln!("error: {e}");
                return 1;
            }
        },
    };
    let manifest = RunManifest {
        subcommand: name.to_string(),
        config,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        input_hashes: hashes,
        threads: common.threads,
        wall_time_s: wall,
        outputs: bundle.listing(),
        certificates,
        status: status.to_string(),
        exit_code: code,
        error,
    };
    let written = serde_json::to_string_pretty(&manifest)
        .map_err(Error::from)
        .and_then(|s| fs::write(out.join("manifest.json"), s).map_err(Error::from));
    if let Err(e) = written {
        eprintln!("error: cannot write manifest: {e}");
        return 1;
    }
    info!("{name} finished with status {status} in {wall:.2} s; output in {}", out.display());
    code
}

type Failure = (Error, Value);

fn execute(
    cmd: &Command,
    common: &Common,
    out: &Path,
    bundle: &mut Option<Bundle>,
    hashes: &mut BTreeMap<String, String>,
) -> std::result::Result<Outcome, Failure> {
    let file = common.config.as_deref();
    macro_rules! resolved {
        ($cfg:ty, $args:expr) => {
            resolve::<$cfg, _>(cmd.name(), file, $args, hashes).map_err(|e| (e, Value::Null))?
        };
    }
    match cmd {
        Command::PmeLimit { args, .. } => {
            let (c, v) = resolved!(PmeLimitConfig, args);
            let b = open(bundle, out, &v)?;
            pme_limit(&c, b).map_err(|e| (e, v.clone())).map(|certificates| Outcome { config: v, certificates })
        }
        Command::Barenblatt { args, .. } => {
            let (c, v) = resolved!(BarenblattConfig, args);
            check_barenblatt(&c).map_err(|e| (e, v.clone()))?;
            let b = open(bundle, out, &v)?;
            barenblatt(&c, b).map_err(|e| (e, v.clone())).map(|certificates| Outcome { config: v, certificates })
        }
        Command::Evolve { args, .. } => {
            let (c, v) = resolved!(EvolveConfig, args);
            if let Some(pairs) = c.random_pairs {
                let grid = make_grid(c.half_width, c.n).map_err(|e| (e, v.clone()))?;
                let b = open(bundle, out, &v)?;
                return suite(&c, pairs, grid, b).map_err(|e| (e, v.clone())).map(|certificates| Outcome { config: v, certificates });
            }
            let (config, u0) = prepare_evolve(&c, hashes).map_err(|e| (e, v.clone()))?;
            let b = open(bundle, out, &v)?;
            run_evolve(&c, &config, &u0, b).map_err(|e| (e, v.clone())).map(|certificates| Outcome { config: v, certificates })
        }
        Command::MesaSweep { args, .. } => {
            let (c, v) = resolved!(MesaSweepConfig, args);
            let s = required(c.s, "s").map_err(|e| (e, v.clone()))?;
            if c.u0 == "delta" || c.u0 == "preset:delta" {
                let grid = make_grid(c.half_width.unwrap_or(25.0), c.n.unwrap_or(1024)).map_err(|e| (e, v.clone()))?;
                let b = open(bundle, out, &v)?;
                sweep_barenblatt(&c, s, grid, b).map_err(|e| (e, v.clone())).map(|certificates| Outcome { config: v, certificates })
            } else {
                let grid = make_grid(c.half_width.unwrap_or(50.0), c.n.unwrap_or(4096)).map_err(|e| (e, v.clone()))?;
                let u0 = load_u0(&c.u0, grid, hashes).map_err(|e| (e, v.clone()))?;
                let b = open(bundle, out, &v)?;
                sweep_general(&c, s, &u0, b).map_err(|e| (e, v.clone())).map(|certificates| Outcome { config: v, certificates })
            }
        }
        Command::Obstacle { args, .. } => {
            let (c, v) = resolved!(ObstacleConfig, args);
            let plan = plan_obstacle(&c).map_err(|e| (e, v.clone()))?;
            let b = open(bundle, out, &v)?;
            obstacle(&c, &plan, b).map_err(|e| (e, v.clone())).map(|certificates| Outcome { config: v, certificates })
        }
        Command::SymmCheck { args, .. } => {
            let (c, v) = resolved!(SymmConfig, args);
            let m = required(c.m, "m").map_err(|e| (e, v.clone()))?;
            let s = required(c.s, "s").map_err(|e| (e, v.clone()))?;
            if !(m > 1.0) || !(s > 0.0 && s < 1.0) {
                return Err((Error::config(format!("need m > 1 and s in (0, 1), got m = {m}, s = {s}")), v));
            }
            let grid = make_grid(c.half_width, c.n).map_err(|e| (e, v.clone()))?;
            let b = open(bundle, out, &v)?;
            symm_check(&c, m, s, grid, b).map_err(|e| (e, v.clone())).map(|certificates| Outcome { config: v, certificates })
        }
    }
}

fn open<'a>(bundle: &'a mut Option<Bundle>, out: &Path, config: &Value) -> std::result::Result<&'a mut Bundle, Failure> {
    let b = Bundle::new(out.to_path_buf()).map_err(|e| (e, config.clone()))?;
    Ok(bundle.insert(b))
}

#[derive(Serialize)]
struct DhatRow {
    m: f64,
    dhat: f64,
    d_infinity: f64,
    relative_gap: f64,
}

#[derive(Serialize)]
struct LaplacianRow {
    x: f64,
    laplacian: f64,
}

fn pme_limit(c: &PmeLimitConfig, b: &mut Bundle) -> Result<Value> {
    let report = pme_limit_convergence_check(&c.m_list, c.mass, 1)?;
    b.rows("limit.csv", &report.rows)?;
    let d_inf = d_infinity(1);
    let dhat: Vec<DhatRow> = c
        .dhat_m_list
        .iter()
        .map(|&m| {
            let d = pme_dhat(m, 1);
            DhatRow { m, dhat: d, d_infinity: d_inf, relative_gap: (d - d_inf).abs() / d_inf }
        })
        .collect();
    b.rows("dhat.csv", &dhat)?;
    let limit = pme_mesa_limit(c.mass, 1)?;
    let mut lap_err = Vec::new();
    for h in [c.h, 0.5 * c.h] {
        let check = mesa_laplacian_check(&limit, c.t, h);
        let err = check.iter().map(|(_, d)| (d + 1.0 / c.t).abs()).fold(0.0, f64::max);
        if h == c.h {
            let rows: Vec<LaplacianRow> = check.iter().map(|&(x, d)| LaplacianRow { x, laplacian: d }).collect();
            b.rows("mesa_laplacian.csv", &rows)?;
        }
        lap_err.push(json!({ "h": h, "max_error": err, "error_over_h2": err / (h * h) }));
    }
    let grid = make_grid(c.half_width, c.n)?;
    for &m in &c.m_list {
        let p = PmeParams::new(m, 1, c.mass)?;
        let f = Profile::from_radial(grid, |x| pme_profile(&p, x));
        b.profile(&format!("F_m{m}"), &f)?;
    }
    Ok(json!({
        "r0": report.r0,
        "l1_decreasing": report.l1_decreasing,
        "sup_decreasing": report.sup_decreasing,
        "dhat": dhat.iter().map(|r| json!({"m": r.m, "dhat": r.dhat, "relative_gap": r.relative_gap})).collect::<Vec<_>>(),
        "d_infinity": d_inf,
        "mesa_laplacian": lap_err,
    }))
}

fn check_barenblatt(c: &BarenblattConfig) -> Result<()> {
    let m = required(c.m, "m")?;
    let s = required(c.s, "s")?;
    if !(m > 1.0) || !m.is_finite() {
        return Err(Error::config(format!("m must exceed 1, got {m}")));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::config(format!("s must lie in (0, 1), got {s}")));
    }
    if !["fixed-point", "evolution", "both"].contains(&c.route.as_str()) {
        return Err(Error::config(format!("route must be fixed-point, evolution or both, got {:?}", c.route)));
    }
    make_grid(c.half_width, c.n)?;
    make_grid(c.evolution_half_width, c.evolution_n)?;
    if c.route != "fixed-point" && c.t_star.is_none() && !(c.evolution_half_width > 2.0 * c.half_width) {
        return Err(Error::config("evolution-half-width must exceed twice half-width unless --t-star is given"));
    }
    Ok(())
}

fn write_triple(b: &mut Bundle, t: &SelfSimilarTriple, suffix: &str) -> Result<()> {
    b.profile(&format!("F{suffix}"), &t.f)?;
    b.profile(&format!("G{suffix}"), &t.g)?;
    b.profile(&format!("P{suffix}"), &t.p)?;
    Ok(())
}

fn triple_summary(t: &SelfSimilarTriple) -> Result<Value> {
    let r = profile_residuals(t)?;
    Ok(json!({
        "f0": t.f.values[t.f.grid.first_positive()],
        "tail_exponent": t.tail_fit.0,
        "tail_coefficient": t.tail_fit.1,
        "expected_tail_exponent": 1.0 + 2.0 * t.s,
        "residuals": r,
        "p_truncated": t.p_truncated,
        "certificate": t.certificate,
    }))
}

fn barenblatt(c: &BarenblattConfig, b: &mut Bundle) -> Result<Value> {
    let (m, s) = (c.m.unwrap(), c.s.unwrap());
    let (alpha, beta) = exponents(m, s);
    let mut certs = json!({ "alpha": alpha, "beta": beta });
    let grid = make_grid(c.half_width, c.n)?;
    let fixed = if c.route != "evolution" {
        let t = profile_fixed_point(m, s, grid, &ProfileOptions { mass: c.mass, ..ProfileOptions::default() })?;
        write_triple(b, &t, "")?;
        certs["fixed_point"] = triple_summary(&t)?;
        Some(t)
    } else {
        None
    };
    if c.route != "fixed-point" {
        // The read-out grid stays in the inner half of the evolution domain, where
        // truncation does not reach; by default it is the fixed-point grid.
        let t_star = c.t_star.unwrap_or_else(|| (0.5 * c.evolution_half_width / c.half_width).powf(1.0 / beta));
        let spread = t_star.powf(beta);
        let out_grid = make_grid(c.half_width.min(0.5 * c.evolution_half_width / spread), c.n)?;
        let evo_grid = make_grid(c.evolution_half_width, c.evolution_n)?;
        let opts = EvolutionOptions {
            mass: c.mass,
            max_ratio: c.max_ratio,
            certificate_tol: c.certificate_tol,
            ..EvolutionOptions::default()
        };
        let t = profile_via_evolution(m, s, evo_grid, t_star, out_grid, &opts)?;
        let suffix = if fixed.is_some() { "_evolution" } else { "" };
        write_triple(b, &t, suffix)?;
        certs["evolution"] = triple_summary(&t)?;
        certs["evolution"]["t_star"] = json!(t_star);
        if let Some(fp) = &fixed {
            certs["route_gap_l1"] = json!(overlap_l1_gap(&fp.f, &t.f));
        }
    }
    Ok(certs)
}

fn prepare_evolve(c: &EvolveConfig, hashes: &mut BTreeMap<String, String>) -> Result<(SolverConfig, Profile<f64>)> {
    let m = required(c.m, "m")?;
    let s = required(c.s, "s")?;
    let spec = c.u0.as_deref().ok_or_else(|| Error::config("--u0 is required (flag or config file)"))?;
    let mut config = SolverConfig::new(m, s);
    config.exterior = c.exterior;
    config.time_step = match c.dt {
        Some(dt) => TimeStep::Fixed { dt },
        None => TimeStep::Adaptive { dt0: c.dt0, dt_min: 1e-16, dt_max: c.dt_max, max_ratio: c.max_ratio },
    };
    config.snapshot_times = c.snapshots.clone();
    config.validate()?;
    if c.dt_halving && c.dt.is_none() {
        return Err(Error::config("--dt-halving needs a fixed --dt"));
    }
    let grid = make_grid(c.half_width, c.n)?;
    let u0 = load_u0(spec, grid, hashes)?;
    Ok((config, u0))
}

fn run_evolve(c: &EvolveConfig, config: &SolverConfig, u0: &Profile<f64>, b: &mut Bundle) -> Result<Value> {
    b.profile("u0", u0)?;
    let traj = evolve(u0, c.t_end, config)?;
    b.rows("diagnostics.csv", &traj.records)?;
    for (k, snap) in traj.snapshots.iter().enumerate() {
        let last = k + 1 == traj.snapshots.len();
        let tag = if last { "final".to_string() } else { format!("t{k}") };
        b.profile(&format!("u_{tag}"), &snap.u)?;
        b.profile(&format!("h_{tag}"), &snap.h)?;
    }
    let benilan = check_benilan(&traj, 1e-6);
    let hres = h_residual(&traj)?;
    let mut certs = json!({
        "steps": traj.records.len(),
        "final_time": traj.last().t,
        "mass_drift": traj.mass_drift(),
        "benilan": benilan,
        "h_residual": hres,
    });
    if c.dt_halving {
        let mut half = config.clone();
        half.time_step = TimeStep::Fixed { dt: 0.5 * c.dt.unwrap() };
        let fine = h_residual(&evolve(u0, c.t_end, &half)?)?;
        let ratio = fine.max_residual / hres.max_residual;
        certs["dt_halving"] = json!({ "fine_max_residual": fine.max_residual, "ratio": ratio });
    }
    Ok(certs)
}

/// Cases cycled through by the random-pair suite.
const SUITE_CASES: [(f64, f64); 6] = [(2.0, 0.25), (3.0, 0.5), (5.0, 0.75), (2.0, 0.75), (5.0, 0.25), (3.0, 0.5)];

fn suite(c: &EvolveConfig, pairs: usize, grid: Grid<f64>, b: &mut Bundle) -> Result<Value> {
    // Explicit m and s pin every pair to one case; otherwise the built-in cases are cycled.
    let cases: Vec<(f64, f64)> = match (c.m, c.s) {
        (Some(m), Some(s)) => vec![(m, s)],
        (None, None) => SUITE_CASES.to_vec(),
        _ => return Err(Error::config("give both --m and --s, or neither, for the random-pair suite")),
    };
    let checkpoints: Vec<f64> = if c.snapshots.is_empty() { vec![0.1 * c.t_end, 0.25 * c.t_end, 0.5 * c.t_end] } else { c.snapshots.clone() };
    let report = conservation_suite(grid, &cases, pairs, c.seed, c.t_end, &checkpoints)?;
    b.rows("pairs.csv", &report.pairs)?;
    Ok(serde_json::to_value(&report)?)
}

fn sweep_barenblatt(c: &MesaSweepConfig, s: f64, grid: Grid<f64>, b: &mut Bundle) -> Result<Value> {
    let rows = mesa_sweep(&c.m_list, s, grid, c.tol)?;
    let records: Vec<_> = rows.iter().map(|(r, _)| r.clone()).collect();
    b.rows("sweep.csv", &records)?;
    for (r, t) in &rows {
        b.profile(&format!("F_m{}", r.m), &t.f)?;
        b.profile(&format!("G_m{}", r.m), &t.g)?;
    }
    let f0_increasing = records.windows(2).all(|w| w[1].f0 > w[0].f0);
    let violations: usize = records.iter().map(|r| r.exterior_violations).sum();
    let mut certs = json!({
        "f0_increasing": f0_increasing,
        "exterior_violations": violations,
        "g_l1_max": records.iter().map(|r| r.g_l1).fold(0.0, f64::max),
        "last": records.last(),
    });
    // The obstacle radius is the limit of the plateau radius.
    match explicit_solution(1.0, s, make_grid(4.0, 4096)?) {
        Ok(sol) => {
            let last = records.last().unwrap();
            certs["obstacle_radius"] = json!(sol.r);
            certs["plateau_radius_gap"] = json!((last.plateau_radius - sol.r).abs() / sol.r);
        }
        Err(e) => warn!("no obstacle radius for comparison: {e}"),
    }
    Ok(certs)
}

fn sweep_general(c: &MesaSweepConfig, s: f64, u0: &Profile<f64>, b: &mut Bundle) -> Result<Value> {
    let options = LimitOptions { t_budget: c.t_budget, stop_factor: c.stop_factor, ..LimitOptions::default() };
    b.profile("u0", u0)?;
    let (report, profiles) = general_data_limit(u0, &c.m_list, s, &options)?;
    b.rows("limit.csv", &report.rows)?;
    for (row, u) in report.rows.iter().zip(&profiles) {
        b.profile(&format!("u_m{}", row.m), u)?;
    }
    Ok(serde_json::to_value(&report)?)
}

struct ObstaclePlan {
    s: f64,
    grid: Grid<f64>,
    explicit: bool,
    vi: Option<ViOptions>,
}

fn plan_obstacle(c: &ObstacleConfig) -> Result<ObstaclePlan> {
    let s = required(c.s, "s")?;
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::config(format!("s must lie in (0, 1), got {s}")));
    }
    let (explicit, vi) = match c.method.as_str() {
        "explicit" => (true, false),
        "vi" => (false, true),
        "both" => (true, true),
        other => return Err(Error::config(format!("method must be explicit, vi or both, got {other:?}"))),
    };
    let vi = if vi {
        if 1.0 - s > 0.5 + 1e-12 {
            return Err(Error::config(format!(
                "the complementarity solver needs s ≥ 1/2 (got s = {s}); use --method explicit"
            )));
        }
        let method = match c.vi_method.as_str() {
            "active-set" => ViMethod::ActiveSet,
            "psor" => ViMethod::Psor { omega: c.omega },
            other => return Err(Error::config(format!("vi-method must be active-set or psor, got {other:?}"))),
        };
        Some(ViOptions { method, ..ViOptions::default() })
    } else {
        None
    };
    if !explicit && c.c.is_none() && !(c.mass > 0.0) {
        return Err(Error::config("mass must be positive"));
    }
    Ok(ObstaclePlan { s, grid: make_grid(c.half_width, c.n)?, explicit, vi })
}

fn obstacle(c: &ObstacleConfig, plan: &ObstaclePlan, b: &mut Bundle) -> Result<Value> {
    let s = plan.s;
    let grid = plan.grid;
    let mut certs = json!({ "s": s, "sigma": 2.0 - 2.0 * s });
    certs["bg_identity"] = serde_json::to_value(bg_identity_check(2.0 * s, make_grid(2.0, c.n.max(64))?)?)?;
    let need_explicit = plan.explicit || c.c.is_none();
    let sol = if need_explicit { Some(explicit_solution(c.mass, s, grid)?) } else { None };
    if let (true, Some(sol)) = (plan.explicit, &sol) {
        b.profile("G", &sol.g)?;
        b.profile("P", &sol.p)?;
        b.profile("F", &sol.f)?;
        certs["R"] = json!(sol.r);
        certs["A"] = json!(sol.a);
        certs["B"] = json!(sol.b);
        certs["C"] = json!(sol.c);
        certs["K"] = json!(sol.k);
        certs["canonical_C"] = json!(sol.canonical_c());
        certs["mass_per_radius"] = json!(sol.mass_per_radius);
        certs["invariants"] = serde_json::to_value(check_invariants(sol)?)?;
        certs["limit_equation_residual"] = json!(crate::mesa::limit_equation_residual(&sol.f, &sol.g, s)?);
        if grid.len() >= 2048 {
            certs["regularity"] = serde_json::to_value(regularity_probe(sol)?)?;
        }
        let ladder = mesa_distance_ladder(&c.s_ladder, c.mass, grid)?;
        let decreasing = ladder.windows(2).all(|w| w[1].1 < w[0].1);
        certs["s_ladder"] = json!({ "distances": ladder, "decreasing": decreasing });
    }
    if let Some(opts) = &plan.vi {
        let cc = c.c.unwrap_or_else(|| sol.as_ref().unwrap().canonical_c());
        let vi = vi_solve(cc, 1.0 - s, grid, opts)?;
        b.profile("G_vi", &vi.g)?;
        b.profile("P_vi", &vi.p)?;
        b.profile("F_vi", &vi.f)?;
        certs["vi"] = json!({
            "c": vi.c,
            "contact_radius": vi.contact_radius,
            "defects": vi.defects,
            "max_defect": vi.defects.max(),
            "iterations": vi.iterations,
        });
        if let (true, Some(sol)) = (plan.explicit, &sol) {
            certs["cross_validation_gap"] = json!(cross_validation_gap(sol, &vi));
        }
    }
    b.json("obstacle.json", &certs)?;
    Ok(certs)
}

#[derive(Serialize)]
struct CurveRow {
    radius: f64,
    u_inf_1: f64,
    u_inf_2: f64,
}

fn write_pair(b: &mut Bundle, run: &CounterexampleRun, suffix: &str) -> Result<()> {
    let (v1, v2) = (&run.traj_1.last().u, &run.traj_2.last().u);
    b.profile(&format!("u_inf_1{suffix}"), v1)?;
    b.profile(&format!("u_inf_2{suffix}"), v2)?;
    let (c1, c2) = concentration_curves(v1, v2)?;
    let rows: Vec<CurveRow> = c1
        .radii
        .iter()
        .zip(&c1.masses)
        .zip(&c2.masses)
        .map(|((r, a), b)| CurveRow { radius: *r, u_inf_1: *a, u_inf_2: *b })
        .collect();
    b.rows(&format!("concentration{suffix}.csv"), &rows)
}

fn symm_check(c: &SymmConfig, m: f64, s: f64, grid: Grid<f64>, b: &mut Bundle) -> Result<Value> {
    let options = LimitOptions { t_budget: c.t_budget, stop_factor: c.stop_factor, ..LimitOptions::default() };
    let claim_applies = m >= 10.0;
    let runner = if claim_applies { counterexample_run } else { control_run };
    if !claim_applies {
        warn!("m = {m} < 10: recording the control run only");
    }
    let run = runner(m, s, grid, &options)?;
    b.profile("u01", &run.u01)?;
    b.profile("u02", &run.u02)?;
    write_pair(b, &run, "")?;
    let mut verdict = json!({ "claim_applies": claim_applies, "report": run.report });
    if c.refine {
        let fine = runner(m, s, make_grid(c.half_width, 2 * c.n)?, &options)?;
        write_pair(b, &fine, "_refined")?;
        let stable = run.report.flip_confirmed && fine.report.flip_confirmed;
        verdict["refined"] = serde_json::to_value(&fine.report)?;
        verdict["stable_under_refinement"] = json!(stable);
    }
    b.json("verdict.json", &verdict)?;
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_resolve_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "n = 256\nmass = 3.0\n[obstacle]\nmass = 5.0\n").unwrap();
        let flags = ObstacleArgs {
            s: Some(0.5),
            mass: None,
            method: None,
            half_width: None,
            n: Some(512),
            vi_method: None,
            omega: None,
            c: None,
            s_ladder: None,
        };
        let mut h = BTreeMap::new();
        let (c, _) = resolve::<ObstacleConfig, _>("obstacle", Some(&path), &flags, &mut h).unwrap();
        assert_eq!(c.n, 512);
        assert_eq!(c.mass, 5.0);
        assert_eq!(c.half_width, 4.0);
        assert_eq!(h.len(), 1);
    }

    #[test]
    fn unknown_config_key_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "bogus = 1\n").unwrap();
        let flags = SymmArgs { m: None, s: None, half_width: None, n: None, refine: None, t_budget: None, stop_factor: None };
        let r = resolve::<SymmConfig, _>("symm-check", Some(&path), &flags, &mut BTreeMap::new());
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
