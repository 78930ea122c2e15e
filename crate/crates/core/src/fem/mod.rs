//! Bilinear finite elements on uniform grids.

mod assembly;
pub mod element;
mod operator;
mod space;

use std::fmt;
use std::sync::Arc;

pub use assembly::{
    apply_functional, assemble, assemble_advection, assemble_diffusion, assemble_rhs, element_matrix,
    functional_vector, functional_vector_on, Advection, Diffusion, ElementMatrix,
};
pub use operator::SparseOperator;
pub use space::{l2_norm, prolongate, BoundaryConditions, DiscreteField, FeSpace};

use crate::mesh::Point;
use crate::Result;

/// Quantity of interest `<j, u>`.
#[derive(Clone, Debug, PartialEq)]
pub enum Functional {
    Zero,
    DomainIntegral,
    /// Value of the Q1 interpolant at a point.
    PointValue(Point),
    /// Integral over the boundary part with this marker.
    BoundaryIntegral(String),
    Scaled { factor: f64, inner: Box<Functional> },
}

impl Functional {
    pub fn scaled(self, factor: f64) -> Self {
        Self::Scaled {
            factor,
            inner: Box::new(self),
        }
    }
}

/// Volume source `f`.
#[derive(Clone)]
pub enum Source {
    Constant(f64),
    Function(Arc<dyn Fn(Point) -> f64 + Send + Sync>),
}

impl Source {
    pub fn eval(&self, p: Point) -> f64 {
        match self {
            Source::Constant(c) => *c,
            Source::Function(f) => f(p),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Source::Constant(c) if *c == 0.0)
    }
}

impl fmt::Debug for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Constant(c) => write!(f, "Constant({c})"),
            Source::Function(_) => write!(f, "Function(..)"),
        }
    }
}

/// Solves `A u = rhs` and wraps the result.
pub fn solve(op: &SparseOperator, rhs: &[f64]) -> Result<DiscreteField> {
    DiscreteField::new(op.space.clone(), op.solve(rhs)?)
}

/// Solves the dual problem `a(phi, z) = <j, phi>` for all test functions.
pub fn solve_dual(op: &SparseOperator, j: &Functional) -> Result<DiscreteField> {
    let jv = functional_vector(&op.space, j)?;
    DiscreteField::new(op.space.clone(), op.solve_transpose(&jv)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{
        gen_gaussian_raster, stream_advection, AdvectionField, CoefficientField, Tensor, Vector,
    };
    use crate::mesh::{Domain, Grid};
    use crate::sparse::CsrMatrix;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_space(n: usize) -> Arc<FeSpace> {
        let d = Domain::unit_square();
        let g = Grid::new(Point::origin(), 1.0 / n as f64, n, n);
        Arc::new(FeSpace::new(g, &d, &BoundaryConditions::dirichlet_all(&d, 0.0)).unwrap())
    }

    fn laplace(space: &FeSpace) -> CsrMatrix {
        assemble_diffusion(space, &Diffusion::Constant(Tensor::identity())).unwrap()
    }

    #[test]
    fn laplacian_stencil() {
        let s = unit_space(4);
        let a = laplace(&s);
        let c = s.grid.node_index(2, 2);
        assert!((a.get(c, c) - 8.0 / 3.0).abs() < 1e-14);
        assert!((a.get(c, c + 1) + 1.0 / 3.0).abs() < 1e-14);
        assert!((a.get(c, c + 6) + 1.0 / 3.0).abs() < 1e-14);
        assert!(a.row(c).map(|(_, v)| v).sum::<f64>().abs() < 1e-14);
        assert!(a.is_symmetric(1e-12));
    }

    #[test]
    fn fine_field_on_micro_subcells_matches_constant() {
        let s = unit_space(4);
        let f = CoefficientField::isotropic(2.5);
        let a = assemble_diffusion(&s, &Diffusion::Fine { field: &f, micro: 1.0 / 16.0 }).unwrap();
        let mut b = laplace(&s);
        b.scale(2.5);
        for (r, c, v) in a.triplets() {
            assert!((v - b.get(r, c)).abs() < 1e-13);
        }
        let err = assemble_diffusion(&s, &Diffusion::Fine { field: &f, micro: 0.1 }).unwrap_err();
        assert!(matches!(err, crate::Error::Divisibility { .. }));
    }

    #[test]
    fn advection_reproduces_linear_transport() {
        let s = unit_space(5);
        let b = AdvectionField::Constant(Vector::new(1.5, -0.5));
        let n = assemble_advection(&s, &Advection::Fine { field: &b, micro: 0.2 }).unwrap();
        let u = s.interpolate(|p| p.x);
        let nu = n.mul_vec(&u);
        // (b . grad x, phi) = 1.5 * integral of phi.
        let mass = functional_vector(&s, &Functional::DomainIntegral).unwrap();
        for (a, m) in nu.iter().zip(&mass) {
            assert!((a - 1.5 * m).abs() < 1e-14);
        }
        let zero = assemble_advection(&s, &Advection::Zero).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn advection_is_skew_on_h10_for_stream_fields() {
        let d = Domain::channel();
        let g = Grid::new(Point::origin(), 1.0 / 64.0, 64, 128);
        let s = FeSpace::new(g, &d, &BoundaryConditions::default()).unwrap();
        let psi = gen_gaussian_raster(17, 33, d.rect, 0.1, 2).unwrap();
        let b = stream_advection(&psi, 1.0, 0.2).unwrap().with_peak(100.0);
        let n = assemble_advection(&s, &Advection::Fine { field: &b, micro: 1.0 / 128.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let mut u: Vec<f64> = (0..s.n_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
            for (a, bnode) in g.boundary_edges() {
                u[a] = 0.0;
                u[bnode] = 0.0;
            }
            let q = n.bilinear(&u, &u);
            let scale: f64 = n.mul_vec(&u).iter().zip(&u).map(|(x, y)| (x * y).abs()).sum();
            assert!(q.abs() <= 1e-10 * scale, "{q} vs {scale}");
        }
    }

    #[test]
    fn rhs_vectors() {
        let s = unit_space(8);
        let f = assemble_rhs(&s, &Source::Constant(1.0), &[]).unwrap();
        let c = s.grid.node_index(3, 4);
        assert!((f[c] - 1.0 / 64.0).abs() < 1e-15);
        let d = Domain::channel();
        let g = Grid::new(Point::origin(), 0.125, 8, 16);
        let cs = FeSpace::new(g, &d, &BoundaryConditions::default()).unwrap();
        let e = assemble_rhs(&cs, &Source::Constant(0.0), &[("E".into(), 1.0)]).unwrap();
        assert!((e.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(assemble_rhs(&cs, &Source::Constant(0.0), &[]).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(
            assemble_rhs(&cs, &Source::Constant(0.0), &[("Q".into(), 1.0)]),
            Err(crate::Error::UnknownMarker(_))
        ));
    }

    #[test]
    fn functionals() {
        let s = unit_space(4);
        let ones = vec![1.0; s.n_dofs()];
        assert!((apply_functional(&s, &Functional::DomainIntegral, &ones).unwrap() - 1.0).abs() < 1e-14);
        let x = s.interpolate(|p| p.x);
        let pv = Functional::PointValue(Point::new(0.25, 0.5));
        assert!((apply_functional(&s, &pv, &x).unwrap() - 0.25).abs() < 1e-15);
        assert!(apply_functional(&s, &Functional::PointValue(Point::new(2.0, 0.5)), &x).is_err());
        let d = Domain::channel();
        let cs = FeSpace::new(Grid::new(Point::origin(), 0.25, 4, 8), &d, &BoundaryConditions::default()).unwrap();
        let b = Functional::BoundaryIntegral("B".into());
        assert!((apply_functional(&cs, &b, &vec![1.0; cs.n_dofs()]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn solve_caches_factorization() {
        let s = unit_space(8);
        let op = SparseOperator::new(laplace(&s), s.clone()).unwrap();
        let f = assemble_rhs(&s, &Source::Constant(1.0), &[]).unwrap();
        let u = op.solve(&f).unwrap();
        let u2 = op.solve(&f.iter().map(|v| 2.0 * v).collect::<Vec<_>>()).unwrap();
        assert_eq!(op.factorization_count(), 1);
        for (a, b) in u.iter().zip(&u2) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
        // Residual on free rows.
        let r = op.matrix().mul_vec(&u);
        let mut worst: f64 = 0.0;
        for d in 0..s.n_dofs() {
            if !s.is_dirichlet(d) {
                worst = worst.max((r[d] - f[d]).abs());
            }
        }
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(worst <= 1e-10 * norm);
        let z = solve_dual(&op, &Functional::DomainIntegral).unwrap();
        for (a, b) in u.iter().zip(&z.values) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(solve_dual(&op, &Functional::Zero).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dirichlet_values_are_reproduced() {
        let d = Domain::unit_square()
            .with_markers(crate::mesh::Side::Left, crate::mesh::SideMarkers::Single("L".into()));
        let bc = BoundaryConditions {
            dirichlet: vec![("L".into(), 1.0), ("boundary".into(), 0.0)],
            neumann: vec![],
        };
        let g = Grid::new(Point::origin(), 0.25, 4, 4);
        let s = Arc::new(FeSpace::new(g, &d, &bc).unwrap());
        let op = SparseOperator::new(laplace(&s), s.clone()).unwrap();
        let u = op.solve(&vec![0.0; s.n_dofs()]).unwrap();
        assert_eq!(u[s.grid.node_index(0, 2)], 1.0);
        // Corners go to the first listed marker.
        assert_eq!(u[s.grid.node_index(0, 0)], 1.0);
        assert_eq!(u[s.grid.node_index(4, 2)], 0.0);
        let mid = u[s.grid.node_index(2, 2)];
        assert!(mid > 0.0 && mid < 1.0);
    }

    #[test]
    fn advection_duality() {
        let d = Domain::channel();
        let g = Grid::new(Point::origin(), 1.0 / 16.0, 16, 32);
        let bc = BoundaryConditions {
            dirichlet: vec![("D".into(), 0.0)],
            neumann: vec![("E".into(), 1.0)],
        };
        let s = Arc::new(FeSpace::new(g, &d, &bc).unwrap());
        let psi = gen_gaussian_raster(9, 17, d.rect, 0.2, 5).unwrap();
        let b = stream_advection(&psi, 1.0, 0.25).unwrap().with_peak(20.0);
        let m = assemble(
            &s,
            &Diffusion::Constant(Tensor::identity() * 0.1),
            &Advection::Fine { field: &b, micro: 1.0 / 16.0 },
        )
        .unwrap();
        let op = SparseOperator::new(m, s.clone()).unwrap();
        assert!(!op.is_symmetric());
        let f = assemble_rhs(&s, &Source::Constant(0.0), &bc.neumann).unwrap();
        let u = op.solve(&f).unwrap();
        let j = Functional::BoundaryIntegral("B".into());
        let z = solve_dual(&op, &j).unwrap();
        let ju = apply_functional(&s, &j, &u).unwrap();
        let fz: f64 = f.iter().zip(&z.values).map(|(a, b)| a * b).sum();
        assert!((ju - fz).abs() <= 1e-10 * ju.abs(), "{ju} {fz}");
    }

    #[test]
    fn poisson_functional_converges_at_second_order() {
        let mut values = Vec::new();
        for n in [8, 16, 32, 128] {
            let s = unit_space(n);
            let op = SparseOperator::new(laplace(&s), s.clone()).unwrap();
            let f = assemble_rhs(&s, &Source::Constant(1.0), &[]).unwrap();
            let u = op.solve(&f).unwrap();
            values.push(apply_functional(&s, &Functional::DomainIntegral, &u).unwrap());
        }
        let reference = values[3];
        let e1 = (values[0] - reference).abs();
        let e2 = (values[1] - reference).abs();
        let e3 = (values[2] - reference).abs();
        assert!((e1 / e2 - 4.0).abs() < 0.4, "{}", e1 / e2);
        assert!((e2 / e3 - 4.0).abs() < 0.6, "{}", e2 / e3);
    }

    #[test]
    fn nested_forms_agree() {
        let coarse = unit_space(4);
        let fine = unit_space(16);
        let grid = Grid::new(Point::origin(), 0.5, 2, 2);
        let tensors: Vec<Tensor> = (0..4)
            .map(|k| Tensor::new(1.0 + k as f64, 0.3, 0.3, 2.0 - 0.2 * k as f64))
            .collect();
        let diff = Diffusion::Cellwise { grid: &grid, tensors: &tensors };
        let ac = assemble_diffusion(&coarse, &diff).unwrap();
        let af = assemble_diffusion(&fine, &diff).unwrap();
        let u = coarse.interpolate(|p| (3.0 * p.x).sin() + p.y * p.y);
        let v = coarse.interpolate(|p| p.x * p.y - (2.0 * p.y).cos());
        let uf = prolongate(&coarse, &u, &fine.grid).unwrap();
        let vf = prolongate(&coarse, &v, &fine.grid).unwrap();
        let a = ac.bilinear(&v, &u);
        let b = af.bilinear(&vf, &uf);
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn l2_norm_of_bilinear_is_exact() {
        let g = Grid::new(Point::origin(), 0.25, 4, 4);
        let v: Vec<f64> = (0..g.n_nodes()).map(|n| {
            let p = g.node_point(n);
            p.x * p.y
        }).collect();
        assert!((l2_norm(&g, &v) - (1.0f64 / 9.0).sqrt()).abs() < 1e-14);
    }
}
