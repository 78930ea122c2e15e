//! Q1 shape functions on the reference square with an m x m subdivision.

use std::sync::OnceLock;

use crate::quadrature::GAUSS2;

/// A quadrature point in reference coordinates with shape values and
/// reference gradients. Weights sum to one over the cell.
#[derive(Clone, Copy, Debug)]
pub struct QPoint {
    pub xi: f64,
    pub eta: f64,
    pub weight: f64,
    pub n: [f64; 4],
    pub grad: [[f64; 2]; 4],
}

/// 2x2 Gauss points of every subcell, grouped four per subcell.
#[derive(Debug)]
pub struct RefCell {
    pub m: usize,
    pub points: Vec<QPoint>,
    /// Reference midpoint of each subcell.
    pub midpoints: Vec<(f64, f64)>,
}

pub fn shape(xi: f64, eta: f64) -> ([f64; 4], [[f64; 2]; 4]) {
    (
        [
            (1.0 - xi) * (1.0 - eta),
            xi * (1.0 - eta),
            (1.0 - xi) * eta,
            xi * eta,
        ],
        [
            [-(1.0 - eta), -(1.0 - xi)],
            [1.0 - eta, -xi],
            [-eta, 1.0 - xi],
            [eta, xi],
        ],
    )
}

impl RefCell {
    fn build(m: usize) -> Self {
        let s = 1.0 / m as f64;
        let mut points = Vec::with_capacity(4 * m * m);
        let mut midpoints = Vec::with_capacity(m * m);
        for sj in 0..m {
            for si in 0..m {
                let (x0, y0) = (si as f64 * s, sj as f64 * s);
                midpoints.push((x0 + 0.5 * s, y0 + 0.5 * s));
                for &(gy, wy) in &GAUSS2 {
                    for &(gx, wx) in &GAUSS2 {
                        let (xi, eta) = (x0 + gx * s, y0 + gy * s);
                        let (n, grad) = shape(xi, eta);
                        points.push(QPoint {
                            xi,
                            eta,
                            weight: wx * wy * s * s,
                            n,
                            grad,
                        });
                    }
                }
            }
        }
        Self { m, points, midpoints }
    }

    /// Cached reference data for subdivision `m` (m <= 64 cached).
    pub fn get(m: usize) -> &'static RefCell {
        const CACHED: usize = 65;
        static CACHE: [OnceLock<&'static RefCell>; CACHED] = [const { OnceLock::new() }; CACHED];
        assert!((1..CACHED).contains(&m), "subdivision {m} out of range");
        CACHE[m].get_or_init(|| Box::leak(Box::new(Self::build(m))))
    }

    pub fn subcell_points(&self, sub: usize) -> &[QPoint] {
        &self.points[4 * sub..4 * sub + 4]
    }
}
