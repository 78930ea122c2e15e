use std::f64::consts::PI;

use dwropt::optim::Status;
use dwropt_cli::config::{DualSpec, ExperimentConfig, FieldSpec, UpscaleSpec};
use dwropt_cli::report::config_echo;
use dwropt_cli::scenario::{generate_field, reference, upscale};
use dwropt_cli::{build, compare_duals, estimate, initial_model, oracle_reference, preset, run_scenario};

fn quick() -> ExperimentConfig {
    let mut c = preset("identity-check").unwrap();
    c.name = "quick".into();
    c.field = FieldSpec::Lognormal { nx: 32, ny: 32, corr_len: 0.05, gamma: 1.0 };
    c.mesh.delta = 0.25;
    c.mesh.coarse = 0.125;
    c.mesh.micro = 1.0 / 32.0;
    c.optimizer.dual = DualSpec::Enhanced;
    c.optimizer.max_cycles = 3;
    c
}

fn constant(coarse: f64, micro: f64) -> ExperimentConfig {
    let mut c = quick();
    c.field = FieldSpec::Constant { tensor: [1.0, 0.0, 0.0, 1.0] };
    c.upscale = UpscaleSpec::Constant { tensor: [1.0, 0.0, 0.0, 1.0] };
    c.mesh.coarse = coarse;
    c.mesh.micro = micro;
    c
}

/// `int u` for `-laplace u = 1` on the unit square with zero boundary values,
/// from the double sine series.
fn torsion_integral() -> f64 {
    let mut s = 0.0;
    for m in (1..400).step_by(2) {
        for n in (1..400).step_by(2) {
            let (m, n) = (m as f64, n as f64);
            s += 1.0 / (m * m * n * n * (m * m + n * n));
        }
    }
    64.0 * s / PI.powi(6)
}

#[test]
fn oracle_matches_the_series_solution() {
    let scn = build(&constant(0.125, 1.0 / 64.0)).unwrap();
    let fine = oracle_reference(&scn).unwrap();
    let exact = torsion_integral();
    assert!((fine.j_of_u - exact).abs() <= 1e-3 * exact, "{} vs {exact}", fine.j_of_u);
}

#[test]
fn oracle_equals_effective_solve_for_a_constant_coefficient() {
    let h = 1.0 / 32.0;
    let c = constant(h, h);
    let dir = tempfile::tempdir().unwrap();
    let (report, b) = estimate(&c, Some(dir.path())).unwrap();
    let j_ref = report.j_reference.unwrap();
    assert!((b.j_of_u - j_ref).abs() <= 1e-13 * j_ref.abs());
    assert!(b.eta.iter().all(|e| e.abs() <= 1e-15));
}

#[test]
fn oracle_refuses_unresolved_rasters_and_large_meshes() {
    let mut c = quick();
    c.mesh.micro = 1.0 / 16.0;
    let e = oracle_reference(&build(&c).unwrap()).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert_eq!(e.phase, "reference");
    let mut c = quick();
    c.dof_cap = 100;
    let e = oracle_reference(&build(&c).unwrap()).unwrap_err();
    assert_eq!(e.exit_code(), 4);
}

#[test]
fn zero_cycles_report_only_the_initial_diagnostics() {
    let mut c = quick();
    c.optimizer.max_cycles = 0;
    let dir = tempfile::tempdir().unwrap();
    let report = run_scenario(&c, Some(dir.path())).unwrap();
    assert_eq!(report.history.len(), 1);
    assert_eq!(report.history[0].cycle, 0);
    assert!(report.history[0].lambda.is_none());
    assert_eq!(report.status, Some(Status::MaxCycles));
    let csv = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn run_writes_every_manifest_file_and_echoes_its_config() {
    let c = quick();
    let dir = tempfile::tempdir().unwrap();
    let report = run_scenario(&c, Some(dir.path())).unwrap();
    assert!(report.missing_files().is_empty(), "{:?}", report.missing_files());
    for f in ["config.toml", "history.csv", "model_initial.csv", "model_final.csv", "eta_final.csv", "field.pgm", "report.txt"] {
        assert!(report.manifest.iter().any(|m| m == f), "{f}");
    }
    let text = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert_eq!(config_echo(&text).unwrap(), c);
    let saved = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(saved, c);
    // The final model can be read back as an initial model.
    let mut again = c.clone();
    again.upscale = UpscaleSpec::File { path: dir.path().join("model_final.csv") };
    let scn = build(&again).unwrap();
    let m = initial_model(&scn).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("model_final.csv")).unwrap();
    assert_eq!(csv.lines().count(), m.len() + 1);
}

#[test]
fn history_csv_uses_full_precision_and_lf() {
    let dir = tempfile::tempdir().unwrap();
    run_scenario(&quick(), Some(dir.path())).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert!(!csv.contains('\r'));
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row.len(), 10);
    let mantissa = row[2].split('e').next().unwrap();
    assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17);
}

#[test]
fn seed_controls_the_field() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let mut cfg = quick();
    generate_field(&cfg, Some(a.path())).unwrap();
    generate_field(&cfg, Some(b.path())).unwrap();
    cfg.seed += 1;
    generate_field(&cfg, Some(c.path())).unwrap();
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("field.pgm")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn advection_runs_export_the_speed() {
    let mut c = preset("advection-small").unwrap();
    c.mesh.micro = 1.0 / 64.0;
    c.mesh.coarse = 1.0 / 16.0;
    if let Some(dwropt_cli::config::AdvectionSpec::Stream { pieces_x, pieces_y, .. }) = &mut c.advection {
        *pieces_x = 16;
        *pieces_y = 32;
    }
    let dir = tempfile::tempdir().unwrap();
    let report = generate_field(&c, Some(dir.path())).unwrap();
    assert!((report.value("advection peak").unwrap() - 100.0).abs() <= 1e-9 * 100.0);
    assert!(dir.path().join("advection_speed.csv").is_file());
    assert!(dir.path().join("coefficient.csv").is_file());
}

#[test]
fn upscale_and_reference_subcommands_write_their_outputs() {
    let c = quick();
    let dir = tempfile::tempdir().unwrap();
    let r = upscale(&c, Some(dir.path())).unwrap();
    assert!(r.missing_files().is_empty());
    assert!(dir.path().join("model_initial.csv").is_file());
    let r = reference(&c, Some(dir.path())).unwrap();
    assert!(r.missing_files().is_empty());
    assert!(r.j_reference.unwrap() > 0.0);
    assert!(dir.path().join("reference.vtk").is_file());
}

#[test]
fn duals_agree_for_an_exact_model() {
    let dir = tempfile::tempdir().unwrap();
    let (_, rows) = compare_duals(&constant(0.125, 1.0 / 32.0), Some(dir.path())).unwrap();
    assert_eq!(rows.len(), 1);
    let (f, e) = (rows[0].full.as_ref().unwrap(), rows[0].enhanced.as_ref().unwrap());
    assert_eq!(f.j_of_u, e.j_of_u);
    assert!(f.theta.abs() <= 1e-15 && e.theta.abs() <= 1e-15);
}

#[test]
fn duals_reach_errors_of_the_same_order() {
    let mut c = quick();
    c.optimizer.max_cycles = 5;
    let dir = tempfile::tempdir().unwrap();
    let (report, rows) = compare_duals(&c, Some(dir.path())).unwrap();
    assert!(report.missing_files().is_empty());
    let last = |pick: fn(&dwropt_cli::scenario::CompareRow) -> Option<&dwropt::optim::CycleRecord>| {
        rows.iter().filter_map(pick).last().unwrap().abs_error.unwrap()
    };
    let full = last(|r| r.full.as_ref());
    let enhanced = last(|r| r.enhanced.as_ref());
    let initial = rows[0].full.as_ref().unwrap().abs_error.unwrap();
    assert!(full < initial && enhanced < initial, "{initial} {full} {enhanced}");
    let ratio = full.max(enhanced) / full.min(enhanced);
    assert!(ratio <= 2.0, "full {full} enhanced {enhanced}");
}
