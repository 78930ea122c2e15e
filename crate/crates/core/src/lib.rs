//! Goal-oriented optimization of effective coefficient models.
//!
//! A fine-scale elliptic (or advection-diffusion) problem with an oscillatory
//! coefficient is replaced by an effective problem with one tensor per
//! sampling cell. Dual weighted residuals split the resulting error in a
//! quantity of interest into local indicators, and a damped Gauss-Newton
//! iteration adjusts the tensors to drive those indicators to zero.

pub mod dwr;
mod error;
pub mod fem;
pub mod field;
pub mod mesh;
pub mod optim;
pub mod problem;
pub mod quadrature;
pub mod sparse;
pub mod upscale;

pub use dwr::{DualMode, ErrorBreakdown};
pub use error::{Error, Result};
pub use fem::{BoundaryConditions, DiscreteField, FeSpace, Functional, Source, SparseOperator};
pub use field::{AdvectionField, CoefficientField, RasterField, Tensor, Vector};
pub use mesh::{build_hierarchy, Domain, MeshHierarchy, Point};
pub use problem::Problem;
pub use upscale::{EffectiveModel, Provenance};
