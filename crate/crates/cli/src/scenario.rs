//! Building problems from configurations and running the subcommands.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use dwropt::dwr::{DualMode, DualState, Estimator, ErrorBreakdown, LocalForms};
use dwropt::fem::{BoundaryConditions, DiscreteField, Functional, Source};
use dwropt::field::{correlated_noise, gen_gaussian_raster, stream_advection, AdvectionField, Axis, CoefficientField};
use dwropt::field::{RasterData, RasterField, Tensor};
use dwropt::mesh::{build_hierarchy, Domain, Point};
use dwropt::optim::{run_optimization, write_history_csv, CycleRecord, OptimizerConfig, Status};
use dwropt::problem::{solve_effective, solve_fine, FineSolution, Problem};
use dwropt::upscale::{arithmetic_mean_model, geometric_mean_model, homogenized_model, EffectiveModel};

use crate::config::{AdvectionSpec, AxisSpec, DomainSpec, DualSpec, ExperimentConfig, FieldSpec, FunctionalSpec, UpscaleSpec};
use crate::report::RunReport;
use crate::{Error, Phase, PhaseError};

/// A configuration turned into a solvable problem.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ExperimentConfig,
    pub problem: Problem,
    /// The coefficient raster, for raster-based fields.
    pub raster: Option<RasterField>,
}

fn tensor(t: &[f64; 4]) -> Tensor {
    Tensor::new(t[0], t[1], t[2], t[3])
}

pub fn build(config: &ExperimentConfig) -> Result<Scenario, PhaseError> {
    config.validate().phase("config")?;
    let domain = match config.domain {
        DomainSpec::UnitSquare => Domain::unit_square(),
        DomainSpec::Channel => Domain::channel(),
    };
    let rect = domain.rect;
    let mut raster = None;
    let field = match &config.field {
        FieldSpec::Constant { tensor: t } => CoefficientField::Constant(tensor(t)),
        FieldSpec::Laminate { axis, a, b, layer_width } => CoefficientField::Laminate {
            direction: match axis {
                AxisSpec::X => Axis::X,
                AxisSpec::Y => Axis::Y,
            },
            a: *a,
            b: *b,
            layer_width: *layer_width,
        },
        FieldSpec::Checkerboard { a, b, tile } => CoefficientField::Checkerboard { a: *a, b: *b, tile: *tile },
        FieldSpec::Lognormal { nx, ny, corr_len, gamma } => {
            let r = gen_gaussian_raster(*nx, *ny, rect, *corr_len, config.seed).phase("field")?;
            raster = Some(r.clone());
            CoefficientField::lognormal(r, *gamma)
        }
        FieldSpec::LognormalFile { path, gamma } => {
            let r = RasterField::read_pgm(path, rect).phase("field")?;
            raster = Some(r.clone());
            CoefficientField::lognormal(r, *gamma)
        }
    };
    let advection = match &config.advection {
        None => AdvectionField::Zero,
        Some(AdvectionSpec::Stream { pieces_x, pieces_y, corr_len, peak, taper_width }) => {
            let (nx, ny) = (pieces_x + 1, pieces_y + 1);
            let noise = correlated_noise(nx, ny, rect, *corr_len, config.seed.wrapping_add(1)).phase("advection")?;
            let psi = RasterField::new(nx, ny, rect, RasterData::Float(noise)).phase("advection")?;
            stream_advection(&psi, 1.0, *taper_width).phase("advection")?.with_peak(*peak)
        }
    };
    let pairs = |v: &[crate::config::MarkerValue]| v.iter().map(|m| (m.marker.clone(), m.value)).collect();
    let bc = BoundaryConditions {
        dirichlet: pairs(&config.boundary.dirichlet),
        neumann: pairs(&config.boundary.neumann),
    };
    let functional = match &config.functional {
        FunctionalSpec::DomainIntegral => Functional::DomainIntegral,
        FunctionalSpec::PointValue { x, y } => Functional::PointValue(Point::new(*x, *y)),
        FunctionalSpec::BoundaryIntegral { marker } => Functional::BoundaryIntegral(marker.clone()),
    };
    let m = &config.mesh;
    let mesh = build_hierarchy(domain, m.delta, m.coarse, m.micro).phase("mesh")?;
    let problem = Problem::new(mesh, field, advection, bc, Source::Constant(config.source), functional).phase("problem")?;
    Ok(Scenario { config: config.clone(), problem, raster })
}

pub fn initial_model(scn: &Scenario) -> Result<EffectiveModel, PhaseError> {
    let p = &scn.problem;
    match &scn.config.upscale {
        UpscaleSpec::Arithmetic => arithmetic_mean_model(&p.field, &p.mesh),
        UpscaleSpec::Geometric => geometric_mean_model(&p.field, &p.mesh),
        UpscaleSpec::Homogenized => homogenized_model(&p.field, &p.mesh),
        UpscaleSpec::Constant { tensor: t } => Ok(EffectiveModel::constant(p.mesh.sampling, tensor(t))),
        UpscaleSpec::File { path } => EffectiveModel::read_csv(path, p.mesh.sampling),
    }
    .phase("upscale")
}

/// The brute-force fine-scale solve. Refuses micro meshes that do not
/// resolve the coefficient raster and meshes above the configured dof cap.
pub fn oracle_reference(scn: &Scenario) -> Result<FineSolution, PhaseError> {
    if let Some(r) = &scn.raster {
        let (px, py) = r.pixel_size();
        let h = scn.problem.mesh.micro;
        if h > px.min(py) * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "micro size {h} is coarser than the raster pixel size {}",
                px.min(py)
            )))
            .phase("reference");
        }
    }
    solve_fine(&scn.problem, scn.config.dof_cap).phase("reference")
}

fn out_dir(config: &ExperimentConfig, out: Option<&Path>) -> std::path::PathBuf {
    match (out, &config.output) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => o.clone(),
        (None, None) => Path::new("out").join(&config.name),
    }
}

fn start(command: &str, config: &ExperimentConfig, out: Option<&Path>) -> Result<RunReport, PhaseError> {
    let dir = out_dir(config, out);
    std::fs::create_dir_all(&dir).map_err(Error::from).phase("output")?;
    let mut report = RunReport::new(command, config, &dir);
    std::fs::write(report.path("config.toml"), config.to_toml()).map_err(Error::from).phase("output")?;
    report.manifest.push("config.toml".into());
    Ok(report)
}

fn timed<T>(report: &mut RunReport, phase: &str, f: impl FnOnce() -> Result<T, PhaseError>) -> Result<T, PhaseError> {
    let t = Instant::now();
    let r = f();
    report.timings.push((phase.into(), t.elapsed().as_secs_f64()));
    r
}

fn write(report: &mut RunReport, file: &str, f: impl FnOnce(&Path) -> Result<(), Error>) -> Result<(), PhaseError> {
    f(&report.path(file)).phase("output")?;
    report.manifest.push(file.into());
    Ok(())
}

fn write_text(report: &mut RunReport, file: &str, text: String) -> Result<(), PhaseError> {
    write(report, file, |p| std::fs::write(p, text).map_err(Error::from))
}

fn eigen_csv(model: &EffectiveModel) -> String {
    let mut s = String::from("cell_i,cell_j,min_eigenvalue\n");
    for (k, e) in model.min_eigenvalues().iter().enumerate() {
        let (i, j) = model.sampling.cell_ij(k);
        writeln!(s, "{i},{j},{e:.16e}").unwrap();
    }
    s
}

fn eta_csv(model: &EffectiveModel, eta: &[f64]) -> String {
    let mut s = String::from("cell_i,cell_j,eta_K\n");
    for (k, e) in eta.iter().enumerate() {
        let (i, j) = model.sampling.cell_ij(k);
        writeln!(s, "{i},{j},{e:.16e}").unwrap();
    }
    s
}

fn note_indefinite(report: &mut RunReport, model: &EffectiveModel, what: &str) {
    let bad = model.min_eigenvalues().iter().filter(|e| **e <= 0.0).count();
    if bad > 0 {
        report.notes.push(format!("{what} model is not elliptic in {bad} sampling cells"));
    }
}

/// Writes the coefficient raster (or, for analytic fields, the coefficient
/// trace sampled at macro cell centers) and the advection speed.
pub fn generate_field(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunReport, PhaseError> {
    let mut report = start("generate-field", config, out)?;
    let scn = timed(&mut report, "build", || build(config))?;
    let p = &scn.problem;
    if let Some(r) = &scn.raster {
        if matches!(r.data, RasterData::Gray(_)) {
            write(&mut report, "field.pgm", |f| r.write_pgm(f))?;
        }
        write(&mut report, "field.csv", |f| r.write_csv(f))?;
    } else {
        let g = p.mesh.macro_grid;
        let trace = RasterField::from_fn(g.nx, g.ny, g.rect(), |i, j| {
            let t = p.field.eval(g.cell_rect(g.cell_index(i, j)).center()).unwrap_or_else(|_| Tensor::zeros());
            0.5 * t.trace()
        });
        write(&mut report, "coefficient.csv", |f| trace.write_csv(f))?;
    }
    if p.has_advection() {
        let g = p.mesh.macro_grid;
        let speed = RasterField::from_fn(g.nx, g.ny, g.rect(), |i, j| {
            p.advection.eval(g.cell_rect(g.cell_index(i, j)).center()).map_or(0.0, |b| b.norm())
        });
        write(&mut report, "advection_speed.csv", |f| speed.write_csv(f))?;
        report.values.push(("advection peak".into(), p.advection.peak()));
    }
    report.write().phase("output")?;
    Ok(report)
}

pub fn upscale(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunReport, PhaseError> {
    let mut report = start("upscale", config, out)?;
    let scn = timed(&mut report, "build", || build(config))?;
    let model = timed(&mut report, "upscale", || initial_model(&scn))?;
    write(&mut report, "model_initial.csv", |f| model.write_csv(f))?;
    write_text(&mut report, "eigenvalues_initial.csv", eigen_csv(&model))?;
    note_indefinite(&mut report, &model, "initial");
    report.write().phase("output")?;
    Ok(report)
}

pub fn reference(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunReport, PhaseError> {
    let mut report = start("reference", config, out)?;
    let scn = timed(&mut report, "build", || build(config))?;
    let fine = timed(&mut report, "reference", || oracle_reference(&scn))?;
    report.j_reference = Some(fine.j_of_u);
    report.values.push(("fine dofs".into(), fine.space.n_dofs() as f64));
    let u = DiscreteField::new(fine.space.clone(), fine.u.clone()).phase("output")?;
    write(&mut report, "reference.vtk", |f| u.write_vtk(f, "u"))?;
    report.write().phase("output")?;
    Ok(report)
}

fn maybe_reference(scn: &Scenario, report: &mut RunReport) -> Result<Option<Arc<FineSolution>>, PhaseError> {
    if !scn.config.reference {
        return Ok(None);
    }
    let fine = timed(report, "reference", || oracle_reference(scn))?;
    report.j_reference = Some(fine.j_of_u);
    Ok(Some(Arc::new(fine)))
}

fn breakdown(p: &Problem, model: &EffectiveModel, mode: DualMode, fine: Option<Arc<FineSolution>>) -> Result<ErrorBreakdown, Error> {
    let space = p.macro_space()?;
    let forms = LocalForms::new(p)?;
    let primal = solve_effective(p, model, space.clone())?;
    let j_ref = fine.as_ref().map(|f| f.j_of_u);
    let dual = DualState::new(mode, p, &primal, fine)?;
    let est = Estimator { problem: p, forms: &forms, macro_space: &space, model, primal: &primal, dual: &dual };
    est.breakdown(j_ref)
}

fn effective_field(p: &Problem, model: &EffectiveModel) -> Result<DiscreteField, Error> {
    let space = p.macro_space()?;
    let s = solve_effective(p, model, space.clone())?;
    DiscreteField::new(space, s.u)
}

/// Error breakdown of the initial model with the configured dual.
pub fn estimate(config: &ExperimentConfig, out: Option<&Path>) -> Result<(RunReport, ErrorBreakdown), PhaseError> {
    let mut report = start("estimate", config, out)?;
    let scn = timed(&mut report, "build", || build(config))?;
    let model = timed(&mut report, "upscale", || initial_model(&scn))?;
    let fine = maybe_reference(&scn, &mut report)?;
    let mode = config.optimizer.to_config().dual_mode;
    let b = timed(&mut report, "estimate", || breakdown(&scn.problem, &model, mode, fine).phase("estimate"))?;
    write(&mut report, "breakdown.csv", |f| b.write_csv(f))?;
    report.values.push(("j(U)".into(), b.j_of_u));
    report.values.push(("theta_H".into(), b.theta_h));
    report.values.push(("theta_delta".into(), b.theta_delta));
    if let Some(i) = b.i_eff {
        report.values.push(("I_eff".into(), i));
    }
    report.values.push(("I_loc".into(), b.i_loc));
    report.write().phase("output")?;
    Ok((report, b))
}

/// The full `optimize` pipeline: field, hierarchy, initial upscale, optional
/// reference, optimization, exports.
pub fn run_scenario(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunReport, PhaseError> {
    let mut report = start("optimize", config, out)?;
    let scn = timed(&mut report, "build", || build(config))?;
    if let Some(r) = &scn.raster {
        if matches!(r.data, RasterData::Gray(_)) {
            write(&mut report, "field.pgm", |f| r.write_pgm(f))?;
        }
    }
    let initial = timed(&mut report, "upscale", || initial_model(&scn))?;
    write(&mut report, "model_initial.csv", |f| initial.write_csv(f))?;
    let fine = maybe_reference(&scn, &mut report)?;
    let opt = config.optimizer.to_config();
    let state = timed(&mut report, "optimize", || {
        run_optimization(&scn.problem, &initial, &opt, fine).phase("optimize")
    })?;
    report.history = state.history.clone();
    report.status = Some(state.status);
    report.alpha = Some(state.alpha);
    write(&mut report, "history.csv", |f| write_history_csv(&state.history, f))?;
    write(&mut report, "model_final.csv", |f| state.model.write_csv(f))?;
    write_text(&mut report, "eta_final.csv", eta_csv(&state.model, &state.eta))?;
    write_text(&mut report, "eigenvalues_final.csv", eigen_csv(&state.model))?;
    note_indefinite(&mut report, &state.model, "final");
    let u = timed(&mut report, "export", || effective_field(&scn.problem, &state.model).phase("export"))?;
    write(&mut report, "solution_final.vtk", |f| u.write_vtk(f, "U"))?;
    report.write().phase("output")?;
    Ok(report)
}

/// One row of the side-by-side dual comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub cycle: usize,
    pub full: Option<CycleRecord>,
    pub enhanced: Option<CycleRecord>,
}

/// Runs the optimization with the fully resolved and with the enhanced dual.
pub fn compare_duals(config: &ExperimentConfig, out: Option<&Path>) -> Result<(RunReport, Vec<CompareRow>), PhaseError> {
    let mut cfg = config.clone();
    cfg.reference = true;
    let mut report = start("compare-duals", &cfg, out)?;
    let scn = timed(&mut report, "build", || build(&cfg))?;
    let initial = timed(&mut report, "upscale", || initial_model(&scn))?;
    let fine = maybe_reference(&scn, &mut report)?;
    let mut runs = Vec::new();
    for (dual, label) in [(DualSpec::Full, "full"), (DualSpec::Enhanced, "enhanced")] {
        let mut spec = cfg.optimizer.clone();
        spec.dual = dual;
        let opt: OptimizerConfig = spec.to_config();
        let state = timed(&mut report, label, || {
            run_optimization(&scn.problem, &initial, &opt, fine.clone()).phase("optimize")
        })?;
        write(&mut report, &format!("history_{label}.csv"), |f| write_history_csv(&state.history, f))?;
        report.notes.push(format!("{label} dual: {:?} after {} updates", state.status, state.cycle));
        runs.push(state);
    }
    let n = runs.iter().map(|s| s.history.len()).max().unwrap_or(0);
    let rows: Vec<CompareRow> = (0..n)
        .map(|c| CompareRow { cycle: c, full: runs[0].history.get(c).cloned(), enhanced: runs[1].history.get(c).cloned() })
        .collect();
    let mut csv = String::from("cycle,full_rel_error_pct,full_theta_tilde,full_I_eff,enhanced_rel_error_pct,enhanced_theta_tilde,enhanced_I_eff\n");
    let o = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.16e}"));
    for r in &rows {
        let cols = |rec: &Option<CycleRecord>| match rec {
            Some(r) => format!("{},{},{}", o(r.rel_error_pct), o(Some(r.theta.abs())), o(r.i_eff)),
            None => ",,".into(),
        };
        writeln!(csv, "{},{},{}", r.cycle, cols(&r.full), cols(&r.enhanced)).unwrap();
    }
    write_text(&mut report, "compare.csv", csv)?;
    let worst = |s: &dwropt::optim::GaussNewtonState| s.status == Status::Diverged;
    report.status = Some(if runs.iter().any(worst) { Status::Diverged } else { runs[1].status });
    report.write().phase("output")?;
    Ok((report, rows))
}

/// Dual mode named by the configuration, for reporting.
pub fn dual_mode(config: &ExperimentConfig) -> DualMode {
    config.optimizer.to_config().dual_mode
}
