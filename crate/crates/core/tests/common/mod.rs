#![allow(dead_code)]

use std::sync::Arc;

use dwropt::fem::{BoundaryConditions, Functional, Source};
use dwropt::field::{gen_gaussian_raster, CoefficientField, Tensor};
use dwropt::mesh::{build_hierarchy, Domain, Rect};
use dwropt::problem::{solve_effective, solve_fine, EffectiveSolution, FineSolution, Problem};
use dwropt::upscale::{geometric_mean_model, EffectiveModel};
use dwropt::AdvectionField;

/// Log-normal diffusion on the unit square, zero Dirichlet data, f = 1.
pub fn lognormal(pixels: usize, delta: f64, coarse: f64, micro: f64, seed: u64, j: Functional) -> Problem {
    let domain = Domain::unit_square();
    let raster = gen_gaussian_raster(pixels, pixels, Rect::unit(), 0.05, seed).unwrap();
    let mesh = build_hierarchy(domain.clone(), delta, coarse, micro).unwrap();
    Problem::new(
        mesh,
        CoefficientField::lognormal(raster, 0.01),
        AdvectionField::Zero,
        BoundaryConditions::dirichlet_all(&domain, 0.0),
        Source::Constant(1.0),
        j,
    )
    .unwrap()
}

pub fn piecewise(delta: f64, coarse: f64, micro: f64, tensors: Vec<Tensor>) -> Problem {
    let domain = Domain::unit_square();
    let mesh = build_hierarchy(domain.clone(), delta, coarse, micro).unwrap();
    let field = CoefficientField::piecewise(mesh.sampling, tensors).unwrap();
    Problem::new(
        mesh,
        field,
        AdvectionField::Zero,
        BoundaryConditions::dirichlet_all(&domain, 0.0),
        Source::Constant(1.0),
        Functional::DomainIntegral,
    )
    .unwrap()
}

pub fn initial_model(p: &Problem) -> EffectiveModel {
    geometric_mean_model(&p.field, &p.mesh).unwrap()
}

pub fn effective(p: &Problem, model: &EffectiveModel) -> EffectiveSolution {
    solve_effective(p, model, p.macro_space().unwrap()).unwrap()
}

pub fn fine(p: &Problem) -> Arc<FineSolution> {
    Arc::new(solve_fine(p, 1 << 22).unwrap())
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
