//! Exact derivatives of the indicators, including the primal response and
//! the response of the (possibly enhanced) dual. Each column costs global
//! and patch solves, so this is meant for small instances.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::{response_u, Context};
use crate::dwr::{dot, gather_macro, DualMode, PatchProblem};
use crate::field::Tensor;
use crate::problem::{FineSolution, Problem};
use crate::upscale::EffectiveModel;
use crate::Result;

/// `d eta_Q / d A_K,ij` as a `|T| x 4|T|` matrix (column `4 K + 2 i + j`).
pub fn exact_indicator_jacobian(
    problem: &Problem,
    model: &EffectiveModel,
    mode: DualMode,
    fine: Option<Arc<FineSolution>>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let ctx = Context::new(problem, fine)?;
    let (primal, dual) = ctx.solve(model, mode)?;
    let est = ctx.estimator(model, &primal, &dual);
    let mesh = &problem.mesh;
    let n = mesh.sampling_count();
    let patches: Vec<Option<Arc<PatchProblem>>> = (0..n)
        .map(|q| match mode {
            DualMode::Enhanced { depth } => ctx.forms.patch(problem, q, depth).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;
    let forms: Vec<_> = (0..n)
        .map(|q| est.cell_dual(q).map(|cd| est.forms_on(&cd, q)))
        .collect::<Result<_>>()?;
    let u: Vec<Vec<f64>> = (0..n).map(|q| est.u_on(q)).collect();
    let eta = (0..n).map(|q| dot(&u[q], &forms[q].indicator)).collect();

    let mut jac = DMatrix::zeros(n, 4 * n);
    for k in 0..n {
        for ij in 0..4 {
            let col = 4 * k + ij;
            let w = response_u(&ctx.forms, mesh, &primal.op, &u[k], k, ij)?;
            let dz = if mode == DualMode::Full {
                None
            } else {
                let local = ctx.forms.macro_unit_diffusion[ij].mul_vec_transpose(&gather_macro(mesh, k, &dual.z_eff));
                let mut rhs = vec![0.0; primal.op.dim()];
                for (nu, r) in mesh.macro_nodes_of(k).into_iter().zip(local) {
                    rhs[nu] -= r;
                }
                Some(primal.op.solve_transpose(&rhs)?)
            };
            for q in 0..n {
                let mut v = dot(&gather_macro(mesh, q, &w), &forms[q].indicator);
                if q == k {
                    v += dot(&u[k], &forms[k].sens[ij]);
                }
                if let Some(dz) = &dz {
                    let dzq = match &patches[q] {
                        Some(p) => p.enhance(&ctx.macro_space, dz, false)?.on_cell(&ctx.forms, mesh, q),
                        None => ctx.forms.prolongate(&gather_macro(mesh, q, dz)),
                    };
                    let dforms = ctx.forms.cell_forms(q, &dzq, model, &problem.b_delta);
                    v += dot(&u[q], &dforms.indicator);
                }
                jac[(q, col)] = v;
            }
        }
    }
    Ok((eta, jac))
}

fn regularization(model: &EffectiveModel, initial: &EffectiveModel) -> f64 {
    model.distance(initial).powi(2)
}

/// `sum_K eta_K^2 + alpha |A - A0|^2`, with the dual recomputed for `model`.
pub fn cost(
    problem: &Problem,
    model: &EffectiveModel,
    initial: &EffectiveModel,
    alpha: f64,
    mode: DualMode,
    fine: Option<Arc<FineSolution>>,
) -> Result<f64> {
    let ctx = Context::new(problem, fine)?;
    let (primal, dual) = ctx.solve(model, mode)?;
    let eta = ctx.estimator(model, &primal, &dual).etas()?;
    Ok(eta.iter().map(|e| e * e).sum::<f64>() + alpha * regularization(model, initial))
}

/// Directional derivative of [`cost`] along `direction` (one tensor per cell).
pub fn cost_derivative(
    problem: &Problem,
    model: &EffectiveModel,
    initial: &EffectiveModel,
    alpha: f64,
    mode: DualMode,
    fine: Option<Arc<FineSolution>>,
    direction: &[Tensor],
) -> Result<f64> {
    let (eta, jac) = exact_indicator_jacobian(problem, model, mode, fine)?;
    let d: Vec<f64> = direction
        .iter()
        .flat_map(|t| [t[(0, 0)], t[(0, 1)], t[(1, 0)], t[(1, 1)]])
        .collect();
    let mut out = 0.0;
    for (q, e) in eta.iter().enumerate() {
        let row: f64 = (0..d.len()).map(|c| jac[(q, c)] * d[c]).sum();
        out += 2.0 * e * row;
    }
    for ((a, b), t) in model.tensors.iter().zip(&initial.tensors).zip(direction) {
        out += 2.0 * alpha * (a - b).dot(t);
    }
    Ok(out)
}
