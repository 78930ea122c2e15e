//! Dual problems, the error identity and local model-error indicators.

mod forms;

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

pub use forms::{gather_macro, gather_micro, unit_tensor, CellForms, LocalForms};

use crate::fem::{assemble, functional_vector, functional_vector_on, prolongate, FeSpace, SparseOperator};
use crate::mesh::{Grid, Patch};
use crate::problem::{EffectiveSolution, FineSolution, Problem};
use crate::upscale::EffectiveModel;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DualMode {
    /// Global dual on the micro mesh.
    Full,
    /// Effective dual in the macro space only.
    Effective,
    /// Effective dual plus fine-scale patch corrections of the given depth.
    Enhanced { depth: usize },
}

/// The global part of the dual approximation for one effective model.
#[derive(Clone, Debug)]
pub struct DualState {
    pub mode: DualMode,
    /// Effective dual in the macro space.
    pub z_eff: Vec<f64>,
    /// Fully resolved fine solution (full mode only).
    pub fine: Option<Arc<FineSolution>>,
}

/// Effective dual `a_delta(phi, z) = <j, phi>` reusing the primal factorization.
pub fn solve_effective_dual(problem: &Problem, primal: &EffectiveSolution) -> Result<Vec<f64>> {
    let jv = functional_vector(&primal.op.space, &problem.functional)?;
    primal.op.solve_transpose(&jv)
}

impl DualState {
    pub fn new(
        mode: DualMode,
        problem: &Problem,
        primal: &EffectiveSolution,
        fine: Option<Arc<FineSolution>>,
    ) -> Result<Self> {
        if mode == DualMode::Full && fine.is_none() {
            return Err(crate::Error::Config("full dual mode needs the fine solution".into()));
        }
        Ok(Self {
            mode,
            z_eff: solve_effective_dual(problem, primal)?,
            fine: if mode == DualMode::Full { fine } else { None },
        })
    }
}

/// Patch-local fine reconstruction `z* = Z + z_K` on the micro grid of a patch.
#[derive(Clone, Debug)]
pub struct Enhancement {
    pub patch: Patch,
    pub grid: Grid,
    /// Lower-left sampling cell of the patch.
    pub origin: (usize, usize),
    /// `z*` at the patch micro nodes.
    pub z: Vec<f64>,
    /// The correction `z_K` alone.
    pub correction: Vec<f64>,
}

/// The fine-scale patch problem around one sampling cell.
#[derive(Debug)]
pub struct PatchProblem {
    pub patch: Patch,
    pub grid: Grid,
    /// Lower-left sampling cell of the patch.
    pub origin: (usize, usize),
    op: SparseOperator,
    jv: Vec<f64>,
}

impl PatchProblem {
    pub fn new(problem: &Problem, k: usize, depth: usize) -> Result<Self> {
        let mesh = &problem.mesh;
        let patch = mesh.patch_of(k, depth)?;
        let grid = mesh.micro_grid(&patch.rect)?;
        let space = Arc::new(FeSpace::patch(grid, &mesh.domain, &problem.bc)?);
        let op = SparseOperator::new(
            assemble(&space, &problem.fine_diffusion(), &problem.fine_advection())?,
            space.clone(),
        )?;
        let jv = functional_vector_on(&space, &problem.functional, true)?;
        // Factor now so cached patches are ready for concurrent use.
        op.solve_transpose(&vec![0.0; jv.len()])?;
        let first = *patch.members.first().expect("patch is never empty");
        Ok(Self {
            origin: mesh.sampling.cell_ij(first),
            patch,
            grid,
            op,
            jv,
        })
    }

    /// Rough size of the stored factorization.
    pub fn factor_bytes(&self) -> usize {
        let (nx, ny) = (self.grid.nx + 1, self.grid.ny + 1);
        let band = nx.min(ny) + 2;
        let factor = if self.op.is_symmetric() { 1 } else { 3 };
        8 * nx * ny * band * factor
    }

    /// Solves `a_eps(phi, Z + z_K) = <j, phi>` for `z_K` vanishing on interior
    /// patch boundaries and Dirichlet parts, natural on Neumann parts. With
    /// `functional == false` the right-hand side drops `j`, which gives the
    /// linear map `Z -> Z + z_K` used for derivatives.
    pub fn enhance(&self, macro_space: &FeSpace, z_eff: &[f64], functional: bool) -> Result<Enhancement> {
        let zi = prolongate(macro_space, z_eff, &self.grid)?;
        let mut rhs = if functional { self.jv.clone() } else { vec![0.0; zi.len()] };
        for (r, a) in rhs.iter_mut().zip(self.op.raw.mul_vec_transpose(&zi)) {
            *r -= a;
        }
        let correction = self.op.solve_transpose(&rhs)?;
        let z = zi.iter().zip(&correction).map(|(a, b)| a + b).collect();
        Ok(Enhancement {
            patch: self.patch.clone(),
            grid: self.grid,
            origin: self.origin,
            z,
            correction,
        })
    }
}

pub fn local_enhancement(
    problem: &Problem,
    macro_space: &FeSpace,
    z_eff: &[f64],
    k: usize,
    depth: usize,
) -> Result<Enhancement> {
    PatchProblem::new(problem, k, depth)?.enhance(macro_space, z_eff, true)
}

impl Enhancement {
    pub fn on_cell(&self, forms: &LocalForms, mesh: &crate::mesh::MeshHierarchy, q: usize) -> Vec<f64> {
        gather_micro(forms.n, mesh.sampling.cell_ij(q), self.origin, self.grid.nx, &self.z)
    }
}

/// Everything needed to evaluate indicators for one effective model.
pub struct Estimator<'a> {
    pub problem: &'a Problem,
    pub forms: &'a LocalForms,
    pub macro_space: &'a FeSpace,
    pub model: &'a EffectiveModel,
    pub primal: &'a EffectiveSolution,
    pub dual: &'a DualState,
}

/// The dual weight used for the indicators of one cell `K` and its patch.
pub enum CellDual<'a> {
    Fine(&'a FineSolution),
    Effective,
    Patch(Box<Enhancement>),
}

impl<'a> Estimator<'a> {
    pub fn cell_dual(&self, k: usize) -> Result<CellDual<'a>> {
        Ok(match (self.dual.mode, &self.dual.fine) {
            (DualMode::Full, Some(f)) => CellDual::Fine(f),
            (DualMode::Enhanced { depth }, _) => CellDual::Patch(Box::new(
                self.forms
                    .patch(self.problem, k, depth)?
                    .enhance(self.macro_space, &self.dual.z_eff, true)?,
            )),
            _ => CellDual::Effective,
        })
    }

    /// Dual weight at the micro nodes of cell `q`.
    pub fn weight_on(&self, dual: &CellDual, q: usize) -> Vec<f64> {
        let mesh = &self.problem.mesh;
        match dual {
            CellDual::Fine(f) => gather_micro(self.forms.n, mesh.sampling.cell_ij(q), (0, 0), f.space.grid.nx, &f.z),
            CellDual::Effective => self.forms.prolongate(&gather_macro(mesh, q, &self.dual.z_eff)),
            CellDual::Patch(e) => e.on_cell(self.forms, mesh, q),
        }
    }

    pub fn forms_on(&self, dual: &CellDual, q: usize) -> CellForms {
        let z = self.weight_on(dual, q);
        self.forms.cell_forms(q, &z, self.model, &self.problem.b_delta)
    }

    pub fn u_on(&self, q: usize) -> Vec<f64> {
        gather_macro(&self.problem.mesh, q, &self.primal.u)
    }

    /// `eta_K = a_delta,K(U, z*) - a_eps,K(U, z*)`.
    pub fn eta(&self, k: usize) -> Result<f64> {
        let dual = self.cell_dual(k)?;
        Ok(dot(&self.u_on(k), &self.forms_on(&dual, k).indicator))
    }

    pub fn etas(&self) -> Result<Vec<f64>> {
        (0..self.problem.mesh.sampling_count())
            .into_par_iter()
            .map(|k| self.eta(k))
            .collect()
    }

    /// Macro residual `F(z) - a_delta(U, z)` with the global dual part.
    pub fn theta_h(&self) -> Result<f64> {
        match (&self.dual.mode, &self.dual.fine) {
            (DualMode::Full, Some(fine)) => {
                let uh = prolongate(self.macro_space, &self.primal.u, &fine.space.grid)?;
                let a = assemble(
                    &fine.space,
                    &self.model.diffusion(),
                    &self.problem.effective_advection(),
                )?;
                Ok(dot(&fine.rhs, &fine.z) - a.bilinear(&fine.z, &uh))
            }
            _ => {
                let z = &self.dual.z_eff;
                Ok(dot(&self.primal.rhs, z) - self.primal.op.raw.bilinear(z, &self.primal.u))
            }
        }
    }

    pub fn breakdown(&self, j_reference: Option<f64>) -> Result<ErrorBreakdown> {
        let eta = self.etas()?;
        let theta_h = self.theta_h()?;
        Ok(ErrorBreakdown::new(
            self.problem.mesh.sampling,
            theta_h,
            eta,
            self.primal.j_of_u,
            j_reference,
        ))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `I_eff = |theta_delta| / |j_ref - j(U)|` (absent when the true error is
/// zero) and `I_loc = sum |eta_K| / |sum eta_K|`.
pub fn effectivity(theta_delta: f64, eta: &[f64], j_reference: Option<f64>, j_of_u: f64) -> (Option<f64>, f64) {
    let i_eff = j_reference.and_then(|r| {
        let e = (r - j_of_u).abs();
        (e > 0.0).then(|| theta_delta.abs() / e)
    });
    let abs_sum: f64 = eta.iter().map(|e| e.abs()).sum();
    let i_loc = if theta_delta != 0.0 { abs_sum / theta_delta.abs() } else { f64::NAN };
    (i_eff, i_loc)
}

#[derive(Clone, Debug)]
pub struct ErrorBreakdown {
    pub sampling: Grid,
    pub theta_h: f64,
    pub theta_delta: f64,
    pub eta: Vec<f64>,
    pub j_of_u: f64,
    pub j_reference: Option<f64>,
    pub i_eff: Option<f64>,
    pub i_loc: f64,
}

impl ErrorBreakdown {
    pub fn new(sampling: Grid, theta_h: f64, eta: Vec<f64>, j_of_u: f64, j_reference: Option<f64>) -> Self {
        let theta_delta = eta.iter().sum();
        let (i_eff, i_loc) = effectivity(theta_delta, &eta, j_reference, j_of_u);
        Self {
            sampling,
            theta_h,
            theta_delta,
            eta,
            j_of_u,
            j_reference,
            i_eff,
            i_loc,
        }
    }

    /// Per-cell rows `cell_i,cell_j,eta_K`, then a summary header and line.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("cell_i,cell_j,eta_K\n");
        for (k, e) in self.eta.iter().enumerate() {
            let (i, j) = self.sampling.cell_ij(k);
            writeln!(out, "{i},{j},{e:.16e}").unwrap();
        }
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.16e}"));
        writeln!(out, "theta_H,theta_delta,I_eff,I_loc").unwrap();
        writeln!(
            out,
            "{:.16e},{:.16e},{},{:.16e}",
            self.theta_h,
            self.theta_delta,
            opt(self.i_eff),
            self.i_loc
        )
        .unwrap();
        std::fs::write(path, out)?;
        Ok(())
    }
}
