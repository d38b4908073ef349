//! Runs the `vp-axistar` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use axistar::io::Table;
use axistar::spherical::RadialState;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vp-axistar"));
    c.env_remove("VP_AXISTAR_THREADS");
    c
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL_RUN: &str = r#"{"psi": {"kind": "skewed-rational", "b": 0.5, "a": 0.5},
    "gamma_max": 0.5, "gamma_steps": 2, "n_orbits": 3, "orbit_time": 0.05, "seed": 7}"#;

/// One skewed continuation shared by the tests that only read it.
fn family() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = scratch("family");
        let cfg = write_config(&dir, SMALL_RUN);
        let out = run(bin().args(["continue", "--config"]).arg(&cfg).arg("--out").arg(dir.join("run")));
        assert!(out.status.success());
        dir.join("run")
    })
}

#[test]
fn solve_spherical_writes_a_passing_report() {
    let dir = scratch("spherical");
    let out = run(bin().args(["solve-spherical", "--out"]).arg(&dir));
    assert_eq!(out.status.code(), Some(0));
    let report = json(&dir.join("report.json"));
    assert_eq!(report["status"], "ok");
    let check = report["checks"].as_array().unwrap().iter().find(|c| c["name"] == "U0(1)=E0").unwrap();
    assert_eq!(check["pass"], true);
    assert!(dir.join("base_state.csv").exists() && dir.join("base_state.json").exists());
}

#[test]
fn out_of_range_mu_is_a_config_error() {
    let dir = scratch("bad-mu");
    let out = run(bin().args(["solve-spherical", "--mu", "5", "--out"]).arg(&dir));
    assert_eq!(out.status.code(), Some(2));
    let failure = json(&dir.join("failure.json"));
    assert_eq!(failure["status"], "config-error");
    assert!(failure["failing"][0].as_str().unwrap().contains("mu"));
    let out = run(bin().args(["continue", "--psi", "triangle", "--out"]).arg(&dir));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = scratch("threads");
    let out = run(bin().env("VP_AXISTAR_THREADS", "lots").args(["solve-spherical", "--out"]).arg(&dir));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn base_profiles_agree_across_resolutions() {
    let dir = scratch("refine");
    let mut states = Vec::new();
    for nr in [128, 256] {
        let sub = dir.join(nr.to_string());
        std::fs::create_dir_all(&sub).unwrap();
        let cfg = write_config(&sub, &format!(r#"{{"nr": {nr}}}"#));
        let out = run(bin().args(["solve-spherical", "--config"]).arg(&cfg).arg("--out").arg(&sub));
        assert!(out.status.success());
        states.push(RadialState::read(&sub).unwrap());
    }
    for i in 0..=200 {
        let r = 1.5 * i as f64 / 200.0;
        assert!((states[0].u0_at(r) - states[1].u0_at(r)).abs() <= 1e-6, "U0 at {r}");
        assert!((states[0].rho0_at(r) - states[1].rho0_at(r)).abs() <= 1e-6, "rho0 at {r}");
    }
}

#[test]
fn gamma_zero_gives_the_base_state() {
    let dir = scratch("gamma-zero");
    let out = run(bin().args(["continue", "--gamma-max", "0", "--out"]).arg(&dir));
    assert!(out.status.success());
    let run_json = json(&dir.join("run.json"));
    assert_eq!(run_json["entries"].as_array().unwrap().len(), 1);
    assert_eq!(run_json["entries"][0]["x_norm"], 0.0);
    let m = json(&dir.join("step_000/manifest.json"));
    assert_eq!(m["gamma"], 0.0);
    let base = RadialState::read(&dir).unwrap();
    assert!((m["mass"].as_f64().unwrap() - base.mass).abs() <= 1e-9 * base.mass);
}

#[test]
fn even_profile_exports_zero_currents() {
    let dir = scratch("even");
    let out = run(bin()
        .args(["continue", "--psi", "even-gaussian", "--gamma-max", "0.8", "--gamma-steps", "2"])
        .args(["--out"])
        .arg(&dir));
    assert!(out.status.success());
    for k in 0..3 {
        let m = json(&dir.join(format!("step_{k:03}/manifest.json")));
        assert_eq!(m["j_all_zero"], true);
        let t = Table::read(&dir.join(format!("step_{k:03}/current.csv"))).unwrap();
        assert!(t.column("j").unwrap().iter().all(|&j| j == 0.0));
    }
}

#[test]
fn skewed_family_grows_monotonically() {
    let run_json = json(&family().join("run.json"));
    assert_eq!(run_json["status"], "ok");
    assert_eq!(run_json["truncated"], false);
    assert_eq!(run_json["config"]["seed"], 7);
    let norms: Vec<f64> = run_json["entries"].as_array().unwrap().iter().map(|e| e["x_norm"].as_f64().unwrap()).collect();
    assert_eq!(norms[0], 0.0);
    assert!(norms.windows(2).all(|w| w[1] > w[0]), "{norms:?}");
    let m = json(&family().join("step_002/manifest.json"));
    assert_eq!(m["schema"], "vp-axistar/1");
    assert_eq!(m["j_all_zero"], false);
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = scratch("determinism");
    let cfg = write_config(&dir, SMALL_RUN);
    // the resolved config, output directory included, is part of run.json,
    // so every run writes to the same place
    let out_dir = dir.join("out");
    let mut snapshots = Vec::new();
    for threads in ["1", "1", "3"] {
        let _ = std::fs::remove_dir_all(&out_dir);
        let out = run(bin()
            .env("VP_AXISTAR_THREADS", threads)
            .args(["continue", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir));
        assert!(out.status.success());
        snapshots.push(tree(&out_dir));
    }
    assert!(snapshots[0].len() > 20);
    assert!(snapshots[0] == snapshots[1], "same thread count differs");
    assert!(snapshots[0] == snapshots[2], "thread count changes the output");
}

#[test]
fn diagnose_passes_on_an_export_and_reports_sectors() {
    let state = family().join("step_001");
    let out_dir = scratch("diagnose");
    let out = run(bin().args(["diagnose"]).arg(&state).arg("--out").arg(&out_dir));
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out_dir.join("diagnostic.json"));
    assert_eq!(report["status"], "ok");
    let l2 = report["sector_norms"].as_array().unwrap().iter().find(|s| s["l"] == 2).unwrap();
    assert!(l2["norm"].as_f64().unwrap() <= 0.6);
    assert!(report["energy_order"].as_f64().unwrap() >= 1.8);
    let sectors = Table::read(&out_dir.join("sector_norms.csv")).unwrap();
    assert_eq!(sectors.rows.len(), 5);
    assert!(out_dir.join("poisson_residuals.csv").exists());
}

#[test]
fn corrupted_density_fails_diagnose() {
    let dir = scratch("corrupt");
    let state = dir.join("state");
    std::fs::create_dir_all(&state).unwrap();
    for e in std::fs::read_dir(family().join("step_002")).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            std::fs::copy(&p, state.join(p.file_name().unwrap())).unwrap();
        }
    }
    let path = state.join("density.csv");
    let mut t = Table::read(&path).unwrap();
    // a sample well inside the support
    let i = t.rows.iter().position(|r| r[0] > 0.4).unwrap();
    t.rows[i][2] *= 1.1;
    t.write(&path).unwrap();
    let out = run(bin().args(["diagnose"]).arg(&state));
    assert_eq!(out.status.code(), Some(1));
    let report = json(&state.join("diagnostics/diagnostic.json"));
    let failing = report["failing"].as_array().unwrap();
    assert!(failing.iter().any(|f| f.as_str().unwrap().starts_with("Poisson residual")), "{failing:?}");
    assert!(state.join("diagnostics/failure.json").exists());
}

#[test]
fn missing_state_is_reported() {
    let dir = scratch("missing");
    let out = run(bin().args(["diagnose"]).arg(dir.join("nothing")).arg("--out").arg(&dir));
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&dir.join("failure.json"))["command"], "diagnose");
}

#[test]
fn plot_tables_show_the_symmetry_breaking() {
    let base_plots = scratch("plots-0");
    let out = run(bin().args(["export-plots"]).arg(family().join("step_000")).arg("--out").arg(&base_plots));
    assert!(out.status.success());
    let cuts = Table::read(&base_plots.join("cuts.csv")).unwrap();
    assert_eq!(cuts.column("rho_equatorial").unwrap(), cuts.column("rho_polar").unwrap());
    let boundary = Table::read(&base_plots.join("support_boundary.csv")).unwrap();
    assert!(boundary.column("radius").unwrap().iter().all(|r| (r - 1.0).abs() <= 1e-6));

    let top_plots = scratch("plots-2");
    let out = run(bin().args(["export-plots"]).arg(family().join("step_002")).arg("--out").arg(&top_plots));
    assert!(out.status.success());
    let cuts = Table::read(&top_plots.join("cuts.csv")).unwrap();
    let (eq, pol) = (cuts.column("rho_equatorial").unwrap(), cuts.column("rho_polar").unwrap());
    let gap = eq.iter().zip(&pol).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap > 1e-6, "{gap}");
    let grid = Table::read(&top_plots.join("density_grid.csv")).unwrap();
    assert_eq!(grid.columns, ["r", "theta", "rho"]);
}
