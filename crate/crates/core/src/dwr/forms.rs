use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::fem::{assemble, Advection, BoundaryConditions, Diffusion, FeSpace};
use crate::field::{Tensor, Vector};
use crate::mesh::{Domain, Grid, MeshHierarchy, Point, Rect};
use crate::problem::Problem;
use crate::sparse::CsrMatrix;
use crate::upscale::EffectiveModel;
use crate::Result;

use super::PatchProblem;

/// Default memory budget for cached patch factorizations.
pub const PATCH_CACHE_BYTES: usize = 1 << 30;

/// Model-independent per-cell data: the fine-scale form restricted to each
/// sampling cell, unit-coefficient forms, and the prolongation from the
/// macro nodes of a cell to its micro nodes.
#[derive(Debug)]
pub struct LocalForms {
    /// Micro cells per sampling cell edge.
    pub n: usize,
    /// Macro cells per sampling cell edge.
    pub m: usize,
    /// For every micro node of a cell: contributing local macro nodes.
    prolong: Vec<Vec<(usize, f64)>>,
    /// Micro form with tensor `E_ij`, index `2 i + j`.
    unit_diffusion: [CsrMatrix; 4],
    /// Micro form with constant advection `e_k`.
    unit_advection: [CsrMatrix; 2],
    /// Macro form with tensor `E_ij` on one sampling cell.
    pub macro_unit_diffusion: [CsrMatrix; 4],
    /// Fine-scale micro form of every sampling cell.
    fine: Vec<CsrMatrix>,
    /// Patch problems by `(cell, depth)`; they do not depend on the model.
    patches: Mutex<PatchCache>,
}

#[derive(Debug, Default)]
struct PatchCache {
    map: BTreeMap<(usize, usize), Arc<PatchProblem>>,
    bytes: usize,
    budget: usize,
}

/// Vectors over the macro nodes of a cell `Q` for a dual weight `z`:
/// `indicator[nu] = a_delta,Q(phi_nu, z) - a_eps,Q(phi_nu, z)` and
/// `sens[2i+j][nu] = (d_j phi_nu, d_i z)_Q`.
#[derive(Clone, Debug)]
pub struct CellForms {
    pub indicator: Vec<f64>,
    pub sens: [Vec<f64>; 4],
}

fn local_space(grid: Grid) -> Result<FeSpace> {
    let r = grid.rect();
    FeSpace::new(grid, &Domain::new(r.min, r.width(), r.height())?, &BoundaryConditions::default())
}

pub fn unit_tensor(i: usize, j: usize) -> Tensor {
    let mut t = Tensor::zeros();
    t[(i, j)] = 1.0;
    t
}

impl LocalForms {
    pub fn new(problem: &Problem) -> Result<Self> {
        let mesh = &problem.mesh;
        let n = mesh.micro_per_sampling();
        let m = mesh.macro_per_sampling();
        let r = n / m;
        let reference = Rect::new(Point::origin(), mesh.delta, mesh.delta);
        let micro = local_space(Grid::new(reference.min, mesh.micro, n, n))?;
        let macro_space = local_space(Grid::new(reference.min, mesh.coarse, m, m))?;
        let unit = |space: &FeSpace, i: usize, j: usize| {
            assemble(space, &Diffusion::Constant(unit_tensor(i, j)), &Advection::Zero)
        };
        let unit_diffusion = [
            unit(&micro, 0, 0)?,
            unit(&micro, 0, 1)?,
            unit(&micro, 1, 0)?,
            unit(&micro, 1, 1)?,
        ];
        let macro_unit_diffusion = [
            unit(&macro_space, 0, 0)?,
            unit(&macro_space, 0, 1)?,
            unit(&macro_space, 1, 0)?,
            unit(&macro_space, 1, 1)?,
        ];
        let sampling_grid = Grid::new(reference.min, mesh.delta, 1, 1);
        let unit_adv = |v: Vector| {
            let values = [v];
            assemble(
                &micro,
                &Diffusion::Zero,
                &Advection::Cellwise {
                    grid: &sampling_grid,
                    values: &values,
                },
            )
        };
        let unit_advection = [unit_adv(Vector::new(1.0, 0.0))?, unit_adv(Vector::new(0.0, 1.0))?];

        let mut prolong = Vec::with_capacity((n + 1) * (n + 1));
        let axis = |a: usize| {
            let c = (a / r).min(m - 1);
            (c, (a - c * r) as f64 / r as f64)
        };
        for b in 0..=n {
            for a in 0..=n {
                let ((ci, xi), (cj, eta)) = (axis(a), axis(b));
                let w = crate::fem::element::shape(xi, eta).0;
                let nodes = [
                    cj * (m + 1) + ci,
                    cj * (m + 1) + ci + 1,
                    (cj + 1) * (m + 1) + ci,
                    (cj + 1) * (m + 1) + ci + 1,
                ];
                prolong.push(nodes.into_iter().zip(w).filter(|&(_, w)| w != 0.0).collect());
            }
        }

        let fine = (0..mesh.sampling_count())
            .into_par_iter()
            .map(|k| {
                let space = local_space(mesh.micro_grid(&mesh.region(k)?.bbox)?)?;
                assemble(&space, &problem.fine_diffusion(), &problem.fine_advection())
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            n,
            m,
            prolong,
            unit_diffusion,
            unit_advection,
            macro_unit_diffusion,
            fine,
            patches: Mutex::new(PatchCache {
                budget: PATCH_CACHE_BYTES,
                ..Default::default()
            }),
        })
    }

    pub fn micro_nodes(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    pub fn macro_nodes(&self) -> usize {
        (self.m + 1) * (self.m + 1)
    }

    /// Micro node values of the macro function with local values `u`.
    pub fn prolongate(&self, u: &[f64]) -> Vec<f64> {
        self.prolong.iter().map(|c| c.iter().map(|&(a, w)| w * u[a]).sum()).collect()
    }

    /// Transpose of [`Self::prolongate`].
    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.macro_nodes()];
        for (c, &x) in self.prolong.iter().zip(v) {
            for &(a, w) in c {
                out[a] += w * x;
            }
        }
        out
    }

    /// Sets the memory budget for cached patch problems (0 disables caching).
    pub fn set_patch_budget(&self, bytes: usize) {
        self.patches.lock().unwrap_or_else(|e| e.into_inner()).budget = bytes;
    }

    /// The patch problem around `k`, from the cache when possible.
    pub fn patch(&self, problem: &Problem, k: usize, depth: usize) -> Result<Arc<PatchProblem>> {
        let lock = || self.patches.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(p) = lock().map.get(&(k, depth)) {
            return Ok(p.clone());
        }
        let p = Arc::new(PatchProblem::new(problem, k, depth)?);
        let mut cache = lock();
        let bytes = p.factor_bytes();
        if cache.bytes + bytes <= cache.budget {
            cache.bytes += bytes;
            cache.map.insert((k, depth), p.clone());
        }
        Ok(p)
    }

    pub fn fine_form(&self, q: usize) -> &CsrMatrix {
        &self.fine[q]
    }

    pub fn unit_diffusion(&self, i: usize, j: usize) -> &CsrMatrix {
        &self.unit_diffusion[2 * i + j]
    }

    /// `a_delta,Q(phi, z)` for every micro trial function `phi`.
    fn effective_adjoint(&self, t: &Tensor, b: &Vector, dz: &[Vec<f64>; 4], z: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; z.len()];
        for i in 0..2 {
            for j in 0..2 {
                let c = t[(i, j)];
                if c != 0.0 {
                    for (y, d) in y.iter_mut().zip(&dz[2 * i + j]) {
                        *y += c * d;
                    }
                }
            }
        }
        for (k, mat) in self.unit_advection.iter().enumerate() {
            if b[k] != 0.0 {
                for (y, d) in y.iter_mut().zip(mat.mul_vec_transpose(z)) {
                    *y += b[k] * d;
                }
            }
        }
        y
    }

    /// Forms of cell `q` for the dual weight `z` (micro node values on `q`).
    pub fn cell_forms(&self, q: usize, z: &[f64], model: &EffectiveModel, b_delta: &[Vector]) -> CellForms {
        let dz: [Vec<f64>; 4] = std::array::from_fn(|k| self.unit_diffusion[k].mul_vec_transpose(z));
        let mut y = self.effective_adjoint(&model.tensors[q], &b_delta[q], &dz, z);
        for (y, e) in y.iter_mut().zip(self.fine[q].mul_vec_transpose(z)) {
            *y -= e;
        }
        CellForms {
            indicator: self.restrict(&y),
            sens: std::array::from_fn(|k| self.restrict(&dz[k])),
        }
    }

    /// `|grad e|^2` over one cell for micro node values `e`.
    pub fn grad_norm_sq(&self, e: &[f64]) -> f64 {
        self.unit_diffusion[0].bilinear(e, e) + self.unit_diffusion[3].bilinear(e, e)
    }
}

/// Gathers values at the macro nodes of sampling cell `k`.
pub fn gather_macro(mesh: &MeshHierarchy, k: usize, u: &[f64]) -> Vec<f64> {
    mesh.macro_nodes_of(k).into_iter().map(|nu| u[nu]).collect()
}

/// Micro node values of cell `q` taken from a vector on a micro grid whose
/// origin sits at sampling-cell offset `(oi, oj)` and has `width` cells per row.
pub fn gather_micro(n: usize, q_ij: (usize, usize), origin: (usize, usize), width: usize, v: &[f64]) -> Vec<f64> {
    let (qi, qj) = q_ij;
    let (oi, oj) = origin;
    let mut out = Vec::with_capacity((n + 1) * (n + 1));
    for b in 0..=n {
        let row = (qj - oj) * n + b;
        for a in 0..=n {
            out.push(v[row * (width + 1) + (qi - oi) * n + a]);
        }
    }
    out
}
