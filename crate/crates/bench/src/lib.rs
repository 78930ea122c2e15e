//! Shared problem setups for the benchmarks.

use dwropt::fem::{BoundaryConditions, Functional, Source};
use dwropt::field::{gen_gaussian_raster, AdvectionField, CoefficientField};
use dwropt::mesh::{build_hierarchy, Domain};
use dwropt::problem::Problem;

/// Log-normal diffusion on the unit square with micro size `2^-level`, macro
/// size four micro cells and sampling size thirty-two micro cells.
pub fn lognormal_problem(level: i32) -> Problem {
    let domain = Domain::unit_square();
    let h = 2f64.powi(-level);
    let pixels = 1usize << level;
    let raster = gen_gaussian_raster(pixels, pixels, domain.rect, 4.0 * h, 7).unwrap();
    let mesh = build_hierarchy(domain.clone(), 32.0 * h, 4.0 * h, h).unwrap();
    Problem::new(
        mesh,
        CoefficientField::lognormal(raster, 1.0),
        AdvectionField::Zero,
        BoundaryConditions::dirichlet_all(&domain, 0.0),
        Source::Constant(1.0),
        Functional::DomainIntegral,
    )
    .unwrap()
}
