use std::sync::Arc;

use crate::fem::{
    apply_functional, assemble, assemble_rhs, Advection, BoundaryConditions, Diffusion, FeSpace, Functional,
    Source, SparseOperator,
};
use crate::field::{average_advection, AdvectionField, CoefficientField, Vector};
use crate::mesh::MeshHierarchy;
use crate::upscale::EffectiveModel;
use crate::{Error, Result};

/// A fine-scale boundary value problem `-div(A grad u) + b . grad u = f`
/// together with its mesh hierarchy and quantity of interest.
#[derive(Clone, Debug)]
pub struct Problem {
    pub mesh: MeshHierarchy,
    pub field: CoefficientField,
    pub advection: AdvectionField,
    pub bc: BoundaryConditions,
    pub source: Source,
    pub functional: Functional,
    /// Cell averages of the advection field.
    pub b_delta: Vec<Vector>,
}

impl Problem {
    pub fn new(
        mesh: MeshHierarchy,
        field: CoefficientField,
        advection: AdvectionField,
        bc: BoundaryConditions,
        source: Source,
        functional: Functional,
    ) -> Result<Self> {
        bc.check(&mesh.domain)?;
        if let Functional::BoundaryIntegral(m) = &functional {
            if !mesh.domain.has_marker(m) {
                return Err(Error::UnknownMarker(m.clone()));
            }
        }
        if let AdvectionField::Stream(s) = &advection {
            let (dx, dy) = s.piece_size();
            for (piece, what) in [(dx, "advection lattice spacing (x)"), (dy, "advection lattice spacing (y)")] {
                let r = piece / mesh.micro;
                if (r - r.round()).abs() > 1e-9 * r || r.round() < 1.0 {
                    return Err(Error::Config(format!(
                        "{what} {piece} must be a multiple of the micro size {}",
                        mesh.micro
                    )));
                }
            }
        }
        let b_delta = if advection.is_zero() {
            vec![Vector::zeros(); mesh.sampling_count()]
        } else {
            average_advection(&advection, &mesh)?
        };
        Ok(Self {
            mesh,
            field,
            advection,
            bc,
            source,
            functional,
            b_delta,
        })
    }

    pub fn has_advection(&self) -> bool {
        !self.advection.is_zero()
    }

    pub fn macro_space(&self) -> Result<Arc<FeSpace>> {
        Ok(Arc::new(FeSpace::new(self.mesh.macro_grid, &self.mesh.domain, &self.bc)?))
    }

    pub fn fine_space(&self) -> Result<Arc<FeSpace>> {
        Ok(Arc::new(FeSpace::new(self.mesh.fine_grid(), &self.mesh.domain, &self.bc)?))
    }

    pub fn fine_diffusion(&self) -> Diffusion<'_> {
        Diffusion::Fine {
            field: &self.field,
            micro: self.mesh.micro,
        }
    }

    pub fn fine_advection(&self) -> Advection<'_> {
        if self.has_advection() {
            Advection::Fine {
                field: &self.advection,
                micro: self.mesh.micro,
            }
        } else {
            Advection::Zero
        }
    }

    pub fn effective_advection(&self) -> Advection<'_> {
        if self.has_advection() {
            Advection::Cellwise {
                grid: &self.mesh.sampling,
                values: &self.b_delta,
            }
        } else {
            Advection::Zero
        }
    }

    pub fn rhs(&self, space: &FeSpace) -> Result<Vec<f64>> {
        assemble_rhs(space, &self.source, &self.bc.neumann)
    }

    /// Effective operator `(A grad u, grad v) + (b_delta . grad u, v)` on `space`.
    pub fn effective_operator(&self, model: &EffectiveModel, space: Arc<FeSpace>) -> Result<SparseOperator> {
        let m = assemble(&space, &model.diffusion(), &self.effective_advection())?;
        SparseOperator::new(m, space)
    }

    pub fn fine_operator(&self, space: Arc<FeSpace>) -> Result<SparseOperator> {
        let m = assemble(&space, &self.fine_diffusion(), &self.fine_advection())?;
        SparseOperator::new(m, space)
    }

    pub fn functional_value(&self, space: &FeSpace, u: &[f64]) -> Result<f64> {
        apply_functional(space, &self.functional, u)
    }
}

/// Solution of the effective problem on the macro mesh.
#[derive(Debug)]
pub struct EffectiveSolution {
    pub op: SparseOperator,
    pub rhs: Vec<f64>,
    pub u: Vec<f64>,
    pub j_of_u: f64,
}

pub fn solve_effective(problem: &Problem, model: &EffectiveModel, space: Arc<FeSpace>) -> Result<EffectiveSolution> {
    let op = problem.effective_operator(model, space.clone())?;
    let rhs = problem.rhs(&space)?;
    let u = op.solve(&rhs)?;
    let j_of_u = problem.functional_value(&space, &u)?;
    Ok(EffectiveSolution { op, rhs, u, j_of_u })
}

/// Fully resolved primal and dual solutions on the micro mesh.
#[derive(Debug)]
pub struct FineSolution {
    pub space: Arc<FeSpace>,
    pub rhs: Vec<f64>,
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub j_of_u: f64,
}

pub fn solve_fine(problem: &Problem, dof_cap: usize) -> Result<FineSolution> {
    let n = problem.mesh.fine_grid().n_nodes();
    if n > dof_cap {
        return Err(Error::ResourceCap(format!(
            "fine mesh has {n} dofs, cap is {dof_cap}"
        )));
    }
    let space = problem.fine_space()?;
    let op = problem.fine_operator(space.clone())?;
    let rhs = problem.rhs(&space)?;
    let u = op.solve(&rhs)?;
    let jv = crate::fem::functional_vector(&space, &problem.functional)?;
    let z = op.solve_transpose(&jv)?;
    let j_of_u = jv.iter().zip(&u).map(|(a, b)| a * b).sum();
    Ok(FineSolution {
        space,
        rhs,
        u,
        z,
        j_of_u,
    })
}
