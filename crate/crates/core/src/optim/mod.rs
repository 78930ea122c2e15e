//! Damped Gauss-Newton optimization of effective models against local
//! model-error indicators.

mod derivative;

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

pub use derivative::{cost, cost_derivative, exact_indicator_jacobian};

use crate::dwr::{dot, gather_macro, CellDual, DualMode, DualState, Estimator, LocalForms};
use crate::fem::{l2_norm, prolongate, FeSpace};
use crate::field::Tensor;
use crate::problem::{solve_effective, EffectiveSolution, FineSolution, Problem};
use crate::upscale::{EffectiveModel, Provenance};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianMode {
    /// Only `Q = K` entries.
    Diagonal,
    /// All `Q` in the patch around `K`.
    Patch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    /// Uniform regularization weight; `None` picks
    /// `0.1 |theta_0|^2 / mean |A_K|^2` from the initial evaluation.
    pub alpha: Option<f64>,
    /// Multiplies the regularization weight (explicit or automatic).
    pub alpha_scale: f64,
    /// Damping `lambda = lambda_factor * mean |diag(J^T J)|`.
    pub lambda_factor: f64,
    pub jacobian_mode: JacobianMode,
    pub dual_mode: DualMode,
    /// Number of model updates.
    pub max_cycles: usize,
    pub stop_fraction: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            alpha_scale: 1.0,
            lambda_factor: 1.0,
            jacobian_mode: JacobianMode::Patch,
            dual_mode: DualMode::Enhanced { depth: 1 },
            max_cycles: 15,
            stop_fraction: 0.05,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if let Some(a) = self.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return bad(format!("alpha must be finite and nonnegative, got {a}"));
            }
        }
        if !(self.alpha_scale >= 0.0 && self.alpha_scale.is_finite()) {
            return bad(format!("alpha_scale must be finite and nonnegative, got {}", self.alpha_scale));
        }
        if !(self.lambda_factor >= 0.0 && self.lambda_factor.is_finite()) {
            return bad(format!("lambda_factor must be finite and nonnegative, got {}", self.lambda_factor));
        }
        if !(self.stop_fraction > 0.0 && self.stop_fraction <= 1.0) {
            return bad(format!("stop_fraction must lie in (0, 1], got {}", self.stop_fraction));
        }
        Ok(())
    }

    /// Patch depth used for the Jacobian's `omega(K)`.
    pub fn patch_depth(&self) -> usize {
        match self.dual_mode {
            DualMode::Enhanced { depth } => depth,
            _ => 1,
        }
    }
}

/// `[eta_K ; sqrt(alpha) (A_K,ij - A0_K,ij)]`, cells first, then parameters
/// cell-major, then `i`, then `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualVector {
    pub eta: Vec<f64>,
    pub g: Vec<f64>,
}

impl ResidualVector {
    pub fn new(eta: Vec<f64>, model: &EffectiveModel, initial: &EffectiveModel, alpha: f64) -> Self {
        let s = alpha.sqrt();
        let g = model
            .tensors
            .iter()
            .zip(&initial.tensors)
            .flat_map(|(a, b)| {
                let d = a - b;
                [s * d[(0, 0)], s * d[(0, 1)], s * d[(1, 0)], s * d[(1, 1)]]
            })
            .collect();
        Self { eta, g }
    }

    pub fn len(&self) -> usize {
        self.eta.len() + self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self) -> Vec<f64> {
        self.eta.iter().chain(&self.g).copied().collect()
    }

    pub fn norm_sq(&self) -> f64 {
        self.eta.iter().chain(&self.g).map(|v| v * v).sum()
    }
}

/// One parameter column `(K, i, j)`: sparse indicator entries and the
/// regularization entry.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianColumn {
    pub entries: Vec<(usize, f64)>,
    pub reg: f64,
}

/// Rows are residual components, columns the parameters `4 K + 2 i + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockJacobian {
    pub cells: usize,
    pub columns: Vec<JacobianColumn>,
}

impl BlockJacobian {
    pub fn n_params(&self) -> usize {
        self.columns.len()
    }

    /// Largest number of indicator rows touched by one column.
    pub fn band(&self) -> usize {
        self.columns.iter().map(|c| c.entries.len()).max().unwrap_or(0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = self.n_params();
        let mut j = DMatrix::zeros(self.cells + p, p);
        for (c, col) in self.columns.iter().enumerate() {
            for &(q, v) in &col.entries {
                j[(q, c)] += v;
            }
            j[(self.cells + c, c)] = col.reg;
        }
        j
    }

    pub fn normal_matrix(&self) -> DMatrix<f64> {
        let p = self.n_params();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.cells];
        for (c, col) in self.columns.iter().enumerate() {
            for &(q, v) in &col.entries {
                rows[q].push((c, v));
            }
        }
        let mut n = DMatrix::zeros(p, p);
        for row in &rows {
            for &(a, va) in row {
                for &(b, vb) in row {
                    n[(a, b)] += va * vb;
                }
            }
        }
        for (c, col) in self.columns.iter().enumerate() {
            n[(c, c)] += col.reg * col.reg;
        }
        n
    }

    /// `J^T G`.
    pub fn gradient(&self, r: &ResidualVector) -> DVector<f64> {
        DVector::from_iterator(
            self.n_params(),
            self.columns
                .iter()
                .enumerate()
                .map(|(c, col)| col.entries.iter().map(|&(q, v)| v * r.eta[q]).sum::<f64>() + col.reg * r.g[c]),
        )
    }
}

#[derive(Clone, Debug)]
pub struct LmStep {
    /// Symmetrized per-cell update.
    pub delta: Vec<Tensor>,
    pub lambda: f64,
    pub step_norm: f64,
}

/// Solves `(J^T J + lambda I) delta = -J^T G` with
/// `lambda = lambda_factor * mean |diag(J^T J)|`.
pub fn lm_step(residual: &ResidualVector, jac: &BlockJacobian, lambda_factor: f64) -> Result<LmStep> {
    let p = jac.n_params();
    if residual.g.len() != p || residual.eta.len() != jac.cells {
        return Err(Error::Dimension {
            expected: jac.cells + p,
            found: residual.len(),
        });
    }
    let mut n = jac.normal_matrix();
    let m = n.diagonal().iter().map(|v| v.abs()).sum::<f64>() / p as f64;
    let lambda = lambda_factor * m;
    for c in 0..p {
        n[(c, c)] += lambda;
    }
    let rhs = -jac.gradient(residual);
    let x = match n.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => n
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("damped normal equations are singular".into()))?,
    };
    let delta: Vec<Tensor> = x
        .as_slice()
        .chunks(4)
        .map(|c| {
            let off = 0.5 * (c[1] + c[2]);
            Tensor::new(c[0], off, off, c[3])
        })
        .collect();
    let step_norm = delta.iter().map(|t| t.norm_squared()).sum::<f64>().sqrt();
    Ok(LmStep {
        delta,
        lambda,
        step_norm,
    })
}

/// Primal, dual and indicators for one model. Everything derived from it
/// belongs to `model`.
pub struct Evaluation {
    pub model: EffectiveModel,
    pub primal: EffectiveSolution,
    pub dual: DualState,
    pub eta: Vec<f64>,
}

impl Evaluation {
    pub fn theta(&self) -> f64 {
        self.eta.iter().sum()
    }
}

/// Shared per-run data: forms, macro space and the optional fine solution.
pub struct Context<'a> {
    pub problem: &'a Problem,
    pub forms: LocalForms,
    pub macro_space: Arc<FeSpace>,
    pub fine: Option<Arc<FineSolution>>,
}

impl<'a> Context<'a> {
    pub fn new(problem: &'a Problem, fine: Option<Arc<FineSolution>>) -> Result<Self> {
        Ok(Self {
            problem,
            forms: LocalForms::new(problem)?,
            macro_space: problem.macro_space()?,
            fine,
        })
    }

    pub fn solve(&self, model: &EffectiveModel, mode: DualMode) -> Result<(EffectiveSolution, DualState)> {
        let primal = solve_effective(self.problem, model, self.macro_space.clone())?;
        let dual = DualState::new(mode, self.problem, &primal, self.fine.clone())?;
        Ok((primal, dual))
    }

    pub(crate) fn estimator<'b>(&'b self, model: &'b EffectiveModel, primal: &'b EffectiveSolution, dual: &'b DualState) -> Estimator<'b> {
        Estimator {
            problem: self.problem,
            forms: &self.forms,
            macro_space: &self.macro_space,
            model,
            primal,
            dual,
        }
    }

    /// Indicators for `model`, and the approximate Jacobian when requested.
    pub fn evaluate(
        &self,
        model: &EffectiveModel,
        config: &OptimizerConfig,
        jacobian: bool,
    ) -> Result<(Evaluation, Option<Vec<Vec<[f64; 4]>>>)> {
        let (primal, dual) = self.solve(model, config.dual_mode)?;
        let est = self.estimator(model, &primal, &dual);
        let n = self.problem.mesh.sampling_count();
        let per_cell: Vec<(f64, Option<Vec<(usize, [f64; 4])>>)> = (0..n)
            .into_par_iter()
            .map(|k| {
                let cd = est.cell_dual(k)?;
                let fk = est.forms_on(&cd, k);
                let eta = dot(&est.u_on(k), &fk.indicator);
                let block = if jacobian {
                    Some(self.jacobian_block(&est, &cd, k, &fk, config)?)
                } else {
                    None
                };
                Ok((eta, block))
            })
            .collect::<Result<_>>()?;
        let eta = per_cell.iter().map(|c| c.0).collect();
        let blocks = jacobian.then(|| {
            per_cell
                .into_iter()
                .map(|c| c.1.expect("requested").into_iter().map(|(_, v)| v).collect())
                .collect()
        });
        Ok((
            Evaluation {
                model: model.clone(),
                primal,
                dual,
                eta,
            },
            blocks,
        ))
    }

    fn omega(&self, k: usize, config: &OptimizerConfig) -> Result<Vec<usize>> {
        Ok(match config.jacobian_mode {
            JacobianMode::Diagonal => vec![k],
            JacobianMode::Patch => self.problem.mesh.patch_of(k, config.patch_depth())?.members,
        })
    }

    /// Entries `D_Kij eta_Q` for `Q` in `omega(K)`:
    /// `[Q = K] (d_j U, d_i z*)_K + a_delta,Q(w, z*) - a_eps,Q(w, z*)` with the
    /// dual of `K`'s patch and `w` the primal response. The dual response is
    /// dropped.
    fn jacobian_block(
        &self,
        est: &Estimator,
        cd: &CellDual,
        k: usize,
        fk: &crate::dwr::CellForms,
        config: &OptimizerConfig,
    ) -> Result<Vec<(usize, [f64; 4])>> {
        let mesh = &self.problem.mesh;
        let uk = est.u_on(k);
        let responses: Vec<Vec<f64>> = (0..4)
            .map(|ij| response_u(&self.forms, mesh, &est.primal.op, &uk, k, ij))
            .collect::<Result<_>>()?;
        let mut out = Vec::new();
        for q in self.omega(k, config)? {
            let fq = if q == k { fk.clone() } else { est.forms_on(cd, q) };
            let mut vals = [0.0; 4];
            for (ij, w) in responses.iter().enumerate() {
                vals[ij] = dot(&gather_macro(mesh, q, w), &fq.indicator);
                if q == k {
                    vals[ij] += dot(&uk, &fk.sens[ij]);
                }
            }
            out.push((q, vals));
        }
        Ok(out)
    }

    /// Assembles the block Jacobian for the patch layout of `config`.
    pub fn jacobian(&self, blocks: Vec<Vec<[f64; 4]>>, alpha: f64, config: &OptimizerConfig) -> Result<BlockJacobian> {
        let n = blocks.len();
        let mut columns = Vec::with_capacity(4 * n);
        let reg = alpha.sqrt();
        for (k, block) in blocks.into_iter().enumerate() {
            let rows = self.omega(k, config)?;
            for ij in 0..4 {
                columns.push(JacobianColumn {
                    entries: rows.iter().zip(&block).map(|(&q, v)| (q, v[ij])).collect(),
                    reg,
                });
            }
        }
        Ok(BlockJacobian { cells: n, columns })
    }
}

/// Primal response `D_Kij U`: `a_delta(w, phi) = -(d_j U, d_i phi)_K`,
/// homogeneous on Dirichlet parts. `ij = 2 i + j`.
pub fn response_u(
    forms: &LocalForms,
    mesh: &crate::mesh::MeshHierarchy,
    op: &crate::fem::SparseOperator,
    u_k: &[f64],
    k: usize,
    ij: usize,
) -> Result<Vec<f64>> {
    let local = forms.macro_unit_diffusion[ij].mul_vec(u_k);
    let mut rhs = vec![0.0; op.dim()];
    for (nu, r) in mesh.macro_nodes_of(k).into_iter().zip(local) {
        rhs[nu] -= r;
    }
    op.solve_homogeneous(&rhs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Running,
    Converged,
    MaxCycles,
    Diverged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleRecord {
    pub cycle: usize,
    pub l2_error: Option<f64>,
    pub j_of_u: f64,
    pub abs_error: Option<f64>,
    pub rel_error_pct: Option<f64>,
    /// Signed `sum_K eta_K`.
    pub theta: f64,
    pub i_eff: Option<f64>,
    pub i_loc: f64,
    /// Damping and size of the step taken from this model (none after the last).
    pub lambda: Option<f64>,
    pub step_norm: Option<f64>,
    pub cost: f64,
    pub min_eigenvalue: f64,
}

#[derive(Clone, Debug)]
pub struct GaussNewtonState {
    pub initial: EffectiveModel,
    pub model: EffectiveModel,
    /// Number of updates applied.
    pub cycle: usize,
    pub initial_estimator: f64,
    pub alpha: f64,
    pub history: Vec<CycleRecord>,
    pub status: Status,
    /// Indicators of the final model.
    pub eta: Vec<f64>,
}

fn auto_alpha(theta0: f64, model: &EffectiveModel) -> f64 {
    let mean = model.tensors.iter().map(|t| t.norm_squared()).sum::<f64>() / model.len() as f64;
    if mean > 0.0 {
        0.1 * theta0 * theta0 / mean
    } else {
        0.0
    }
}

/// Runs the damped Gauss-Newton loop from `initial`. `fine` supplies the
/// reference for error columns and is required for the full dual.
pub fn run_optimization(
    problem: &Problem,
    initial: &EffectiveModel,
    config: &OptimizerConfig,
    fine: Option<Arc<FineSolution>>,
) -> Result<GaussNewtonState> {
    config.validate()?;
    if config.dual_mode == DualMode::Full && fine.is_none() {
        return Err(Error::Config("the full dual needs a fine reference solve".into()));
    }
    let ctx = Context::new(problem, fine)?;
    let reference = ctx.fine.clone();
    let mut model = initial.clone();
    let mut state = GaussNewtonState {
        initial: initial.clone(),
        model: initial.clone(),
        cycle: 0,
        initial_estimator: 0.0,
        alpha: 0.0,
        history: Vec::new(),
        status: Status::Running,
        eta: Vec::new(),
    };
    loop {
        let want_jac = state.cycle < config.max_cycles;
        let (eval, blocks) = ctx.evaluate(&model, config, want_jac)?;
        let theta = eval.theta();
        if state.cycle == 0 {
            state.initial_estimator = theta.abs();
            let base = config.alpha.unwrap_or_else(|| auto_alpha(theta, initial));
            state.alpha = base * config.alpha_scale;
        }
        let residual = ResidualVector::new(eval.eta.clone(), &model, initial, state.alpha);
        let mut record = record_for(&ctx, &eval, state.cycle, reference.as_deref(), residual.norm_sq())?;
        let theta0 = state.initial_estimator;
        // Indicators of an exact model are pure round-off.
        let noise = 1e-12 * eval.primal.j_of_u.abs();
        state.status = if theta.abs() <= config.stop_fraction * theta0 || theta.abs() <= noise {
            Status::Converged
        } else if theta.abs() > 10.0 * theta0.max(noise) {
            Status::Diverged
        } else if state.cycle >= config.max_cycles {
            Status::MaxCycles
        } else {
            Status::Running
        };
        if state.status != Status::Running {
            state.history.push(record);
            state.model = model;
            state.eta = eval.eta;
            return Ok(state);
        }
        let jac = ctx.jacobian(blocks.expect("requested"), state.alpha, config)?;
        let step = lm_step(&residual, &jac, config.lambda_factor)?;
        record.lambda = Some(step.lambda);
        record.step_norm = Some(step.step_norm);
        state.history.push(record);
        let tensors = model.tensors.iter().zip(&step.delta).map(|(a, d)| a + d).collect();
        state.cycle += 1;
        model = EffectiveModel::new(model.sampling, tensors, Provenance::Optimized(state.cycle))?;
        if !model.is_symmetric() {
            return Err(Error::Numerical(format!("model lost symmetry in cycle {}", state.cycle)));
        }
    }
}

fn record_for(
    ctx: &Context,
    eval: &Evaluation,
    cycle: usize,
    reference: Option<&FineSolution>,
    cost: f64,
) -> Result<CycleRecord> {
    let theta = eval.theta();
    let j_u = eval.primal.j_of_u;
    let (i_eff, i_loc) = crate::dwr::effectivity(theta, &eval.eta, reference.map(|r| r.j_of_u), j_u);
    let (mut l2_error, mut abs_error, mut rel_error_pct) = (None, None, None);
    if let Some(r) = reference {
        let uh = prolongate(&ctx.macro_space, &eval.primal.u, &r.space.grid)?;
        let d: Vec<f64> = r.space.nodal(&r.u).iter().zip(&uh).map(|(a, b)| a - b).collect();
        l2_error = Some(l2_norm(&r.space.grid, &d));
        let e = (r.j_of_u - j_u).abs();
        abs_error = Some(e);
        rel_error_pct = Some(100.0 * e / r.j_of_u.abs());
    }
    Ok(CycleRecord {
        cycle,
        l2_error,
        j_of_u: j_u,
        abs_error,
        rel_error_pct,
        theta,
        i_eff,
        i_loc,
        lambda: None,
        step_norm: None,
        cost,
        min_eigenvalue: eval.model.min_eigenvalues().into_iter().fold(f64::INFINITY, f64::min),
    })
}

/// Columns `cycle,l2_error,j_of_U,abs_error,rel_error_pct,theta_tilde,I_eff,I_loc,lambda,step_norm`;
/// missing values are empty.
pub fn history_csv(history: &[CycleRecord]) -> String {
    let mut out = String::from("cycle,l2_error,j_of_U,abs_error,rel_error_pct,theta_tilde,I_eff,I_loc,lambda,step_norm\n");
    let f = |v: f64| format!("{v:.16e}");
    let o = |v: Option<f64>| v.map(f).unwrap_or_default();
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.cycle,
            o(r.l2_error),
            f(r.j_of_u),
            o(r.abs_error),
            o(r.rel_error_pct),
            f(r.theta.abs()),
            o(r.i_eff),
            f(r.i_loc),
            o(r.lambda),
            o(r.step_norm)
        )
        .unwrap();
    }
    out
}

pub fn write_history_csv(history: &[CycleRecord], path: &Path) -> Result<()> {
    std::fs::write(path, history_csv(history))?;
    Ok(())
}
