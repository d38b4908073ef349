//! Command implementations behind the `vp-axistar` binary.
//!
//! Every command writes a JSON outcome into its output directory, also on
//! failure. A bad configuration exits with 2, any other failure with 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use axistar::config::{PsiSpec, RunConfig};
use axistar::io::{write_json, Table};
use axistar::model::{diagnose, AxisymmetricState, OrbitOptions, SCHEMA};
use axistar::operator::{step_directory, DeformationOperator, RunManifest};
use axistar::profiles::{Ansatz, PolytropeProfile};
use axistar::spherical::{solve_base_state, InvariantCheck};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub const THREADS_ENV: &str = "VP_AXISTAR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "vp-axistar", version, about = "Axially symmetric Vlasov-Poisson steady states")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the spherically symmetric base state and check its invariants.
    SolveSpherical(RunArgs),
    /// Follow the family from gamma = 0 to gamma_max and export every step.
    Continue(RunArgs),
    /// Re-check an exported state, including sector norms of K and orbits.
    Diagnose {
        /// Directory written by `continue` for one step.
        state_dir: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write plot-ready tables for an exported state.
    ExportPlots {
        state_dir: PathBuf,
        /// Output directory (default: STATE_DIR/plots).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

/// Configuration file plus the flags that override it.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Polytropic exponent, -1/2 < mu < 7/2.
    #[arg(long, allow_negative_numbers = true)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub gamma_max: Option<f64>,
    #[arg(long)]
    pub gamma_steps: Option<usize>,
    /// Rotation profile: even-gaussian or skewed-rational.
    #[arg(long, value_name = "KIND")]
    pub psi: Option<String>,
    /// Seed for the orbit sampling.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Solver tolerance: the shooting tolerance for solve-spherical, the
    /// Newton tolerance otherwise.
    #[arg(long, value_name = "X")]
    pub tol: Option<f64>,
}

/// What went wrong, and which exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
    Invariants(Vec<String>),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) | Failure::Invariants(_) => 1,
        }
    }

    fn status(&self) -> &'static str {
        match self {
            Failure::Config(_) => "config-error",
            Failure::Numerical(_) => "numerical-failure",
            Failure::Invariants(_) => "invariant-failure",
        }
    }

    fn messages(&self) -> Vec<String> {
        match self {
            Failure::Config(m) | Failure::Numerical(m) => vec![m.clone()],
            Failure::Invariants(v) => v.clone(),
        }
    }
}

impl From<axistar::Error> for Failure {
    fn from(e: axistar::Error) -> Self {
        match e {
            axistar::Error::InvalidParameter(m) => Failure::Config(m),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

#[derive(Serialize)]
struct FailureReport<'a> {
    schema: &'a str,
    command: &'a str,
    status: &'a str,
    exit_code: u8,
    failing: Vec<String>,
}

/// Builds the resolved configuration from the file and the flags.
pub fn resolve_config(args: &RunArgs, tol_is_base: bool) -> Outcome<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(mu) = args.mu {
        cfg.mu = mu;
    }
    if let Some(g) = args.gamma_max {
        cfg.gamma_max = g;
    }
    if let Some(n) = args.gamma_steps {
        cfg.gamma_steps = n;
    }
    if let Some(kind) = &args.psi {
        if kind != cfg.psi.kind() {
            cfg.psi = PsiSpec::from_kind(kind)?;
        }
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.tol {
        if tol_is_base {
            cfg.base_tol = t;
        } else {
            cfg.newton_tol = t;
        }
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Caps the worker pool from the environment. Unset means rayon's default.
pub fn configure_threads() -> Outcome<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Numerical(format!("thread pool: {e}")))
}

fn failing(checks: &[InvariantCheck], prefix: &str) -> Vec<String> {
    checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{prefix}{}: {:e} (threshold {:e})", c.name, c.value, c.threshold))
        .collect()
}

fn io_failure(e: std::io::Error) -> Failure {
    Failure::Numerical(e.to_string())
}

#[derive(Serialize)]
struct SphericalReport<'a> {
    schema: &'a str,
    command: &'a str,
    status: &'a str,
    config: &'a RunConfig,
    mu: f64,
    e0: f64,
    mass: f64,
    checks: Vec<InvariantCheck>,
    failing: Vec<String>,
}

pub fn solve_spherical(cfg: &RunConfig) -> Outcome<()> {
    let out = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out).map_err(io_failure)?;
    let base = solve_base_state(cfg.mu, cfg.nr, cfg.base_tol)?;
    base.write(&out)?;
    let checks = base.invariant_checks();
    let bad = failing(&checks, "");
    write_json(
        &out.join("report.json"),
        &SphericalReport {
            schema: SCHEMA,
            command: "solve-spherical",
            status: if bad.is_empty() { "ok" } else { "invariant-failure" },
            config: cfg,
            mu: base.mu,
            e0: base.e0,
            mass: base.mass,
            checks,
            failing: bad.clone(),
        },
    )?;
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariants(bad))
    }
}

#[derive(Serialize)]
struct ContinueReport<'a> {
    schema: &'a str,
    command: &'a str,
    status: &'a str,
    config: &'a RunConfig,
    #[serde(flatten)]
    run: RunManifest,
    failing: Vec<String>,
}

pub fn orbit_options(cfg: &RunConfig) -> OrbitOptions {
    OrbitOptions {
        n_orbits: cfg.n_orbits,
        t_final: cfg.orbit_time,
        seed: cfg.seed,
        ..Default::default()
    }
}

fn operator(cfg: &RunConfig) -> Outcome<DeformationOperator> {
    let base = Arc::new(solve_base_state(cfg.mu, cfg.nr, cfg.base_tol)?);
    let ansatz = Ansatz::with_quadrature(
        PolytropeProfile::new(base.mu, base.e0)?,
        cfg.psi.build()?,
        cfg.quadrature(),
    )?;
    Ok(DeformationOperator::new(base, ansatz, &cfg.discretization())?)
}

pub fn continue_family(cfg: &RunConfig) -> Outcome<()> {
    let out = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out).map_err(io_failure)?;
    let op = operator(cfg)?;
    op.base().write(&out)?;
    let cont = op.continue_in_gamma(cfg.gamma_max, cfg.gamma_steps, &cfg.continuation())?;
    let mut bad = Vec::new();
    for (k, entry) in cont.entries.iter().enumerate() {
        let state = AxisymmetricState::assemble(&op, entry.gamma, &entry.field)?;
        let orbits = state.stationarity_check(&orbit_options(cfg));
        state.export(&out.join(step_directory(k)), Some(&orbits))?;
        bad.extend(failing(&state.checks, &format!("{}: ", step_directory(k))));
    }
    let status = match (bad.is_empty(), cont.truncated) {
        (false, _) => "invariant-failure",
        (true, true) => "truncated",
        (true, false) => "ok",
    };
    write_json(
        &out.join("run.json"),
        &ContinueReport {
            schema: SCHEMA,
            command: "continue",
            status,
            config: cfg,
            run: cont.manifest(),
            failing: bad.clone(),
        },
    )?;
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariants(bad))
    }
}

#[derive(Serialize)]
struct DiagnoseOutput<'a> {
    schema: &'a str,
    command: &'a str,
    status: &'a str,
    state_dir: String,
    #[serde(flatten)]
    report: &'a axistar::model::DiagnosticReport,
    failing: Vec<String>,
}

pub fn diagnose_state(state_dir: &Path, cfg: &RunConfig, out: &Path) -> Outcome<()> {
    std::fs::create_dir_all(out).map_err(io_failure)?;
    let (state, _) = AxisymmetricState::load(state_dir)?;
    let (report, map) = diagnose(&state, &orbit_options(cfg));
    map.write(&out.join("poisson_residuals.csv"))?;
    report.orbits.table().write(&out.join("orbits.csv"))?;
    let mut sectors = Table::new(["l", "norm", "bound", "min_singular"]);
    for s in &report.sector_norms {
        sectors.push(vec![s.l as f64, s.norm, s.bound, s.min_singular]);
    }
    sectors.write(&out.join("sector_norms.csv"))?;
    let bad = failing(&report.checks, "");
    write_json(
        &out.join("diagnostic.json"),
        &DiagnoseOutput {
            schema: SCHEMA,
            command: "diagnose",
            status: if bad.is_empty() { "ok" } else { "invariant-failure" },
            state_dir: state_dir.display().to_string(),
            report: &report,
            failing: bad.clone(),
        },
    )?;
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariants(bad))
    }
}

pub fn export_plots(state_dir: &Path, out: &Path) -> Outcome<()> {
    std::fs::create_dir_all(out).map_err(io_failure)?;
    let (state, _) = AxisymmetricState::load(state_dir)?;
    for (name, table) in state.plot_tables() {
        table.write(&out.join(name))?;
    }
    Ok(())
}

/// Runs one command and writes the failure outcome, if any, next to its
/// other outputs.
pub fn run(cli: Cli) -> ExitCode {
    let (name, out, result) = dispatch(cli);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let report = FailureReport {
                schema: SCHEMA,
                command: name,
                status: f.status(),
                exit_code: f.exit_code(),
                failing: f.messages(),
            };
            let text = serde_json::to_string_pretty(&report).expect("plain data");
            eprintln!("{text}");
            if let Some(dir) = out {
                if std::fs::create_dir_all(&dir).is_ok() {
                    let _ = std::fs::write(dir.join("failure.json"), text + "\n");
                }
            }
            ExitCode::from(f.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> (&'static str, Option<PathBuf>, Outcome<()>) {
    if let Err(f) = configure_threads() {
        return ("startup", None, Err(f));
    }
    match cli.command {
        Command::SolveSpherical(args) => {
            let out = args.out.clone();
            match resolve_config(&args, true) {
                Ok(cfg) => {
                    let dir = PathBuf::from(&cfg.out_dir);
                    ("solve-spherical", Some(dir), solve_spherical(&cfg))
                }
                Err(f) => ("solve-spherical", out, Err(f)),
            }
        }
        Command::Continue(args) => {
            let out = args.out.clone();
            match resolve_config(&args, false) {
                Ok(cfg) => {
                    let dir = PathBuf::from(&cfg.out_dir);
                    ("continue", Some(dir), continue_family(&cfg))
                }
                Err(f) => ("continue", out, Err(f)),
            }
        }
        Command::Diagnose { state_dir, run } => {
            let out = run.out.clone().unwrap_or_else(|| state_dir.join("diagnostics"));
            let result = resolve_config(&run, false).and_then(|cfg| diagnose_state(&state_dir, &cfg, &out));
            ("diagnose", Some(out), result)
        }
        Command::ExportPlots { state_dir, out } => {
            let out = out.unwrap_or_else(|| state_dir.join("plots"));
            let result = export_plots(&state_dir, &out);
            ("export-plots", Some(out), result)
        }
    }
}
