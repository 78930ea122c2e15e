//! Fine-scale data: coefficient tensors, raster images and advection fields.

mod advection;
mod raster;

use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};

pub use advection::{average_advection, stream_advection, AdvectionField, StreamFunction};
pub use raster::{correlated_noise, gen_gaussian_raster, white_noise, RasterData, RasterField};

use crate::mesh::{Grid, Point};
use crate::{Error, Result};

pub type Tensor = Matrix2<f64>;
pub type Vector = Vector2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// The fine-scale diffusion tensor `A^eps(x)`.
#[derive(Clone, Debug)]
pub enum CoefficientField {
    Constant(Tensor),
    /// Layers of width `layer_width` stacked along `direction` (the
    /// coefficient varies with that coordinate), alternating `a`, `b`, with
    /// an `a` layer starting at coordinate 0.
    Laminate {
        direction: Axis,
        a: f64,
        b: f64,
        layer_width: f64,
    },
    Checkerboard {
        a: f64,
        b: f64,
        tile: f64,
    },
    /// `gamma * exp(10 g(x) / 255) * Id` with nearest-pixel `g`.
    LognormalRaster {
        raster: Arc<RasterField>,
        gamma: f64,
    },
    /// One tensor per cell of `grid`.
    Piecewise {
        grid: Grid,
        tensors: Arc<Vec<Tensor>>,
    },
}

impl CoefficientField {
    pub fn isotropic(c: f64) -> Self {
        Self::Constant(Tensor::identity() * c)
    }

    pub fn lognormal(raster: RasterField, gamma: f64) -> Self {
        Self::LognormalRaster {
            raster: Arc::new(raster),
            gamma,
        }
    }

    pub fn piecewise(grid: Grid, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != grid.n_cells() {
            return Err(Error::Dimension {
                expected: grid.n_cells(),
                found: tensors.len(),
            });
        }
        Ok(Self::Piecewise {
            grid,
            tensors: Arc::new(tensors),
        })
    }

    pub fn eval(&self, x: Point) -> Result<Tensor> {
        Ok(match self {
            Self::Constant(t) => *t,
            Self::Laminate {
                direction,
                a,
                b,
                layer_width,
            } => {
                let t = match direction {
                    Axis::X => x.x,
                    Axis::Y => x.y,
                };
                let layer = (t / layer_width).floor() as i64;
                Tensor::identity() * if layer.rem_euclid(2) == 0 { *a } else { *b }
            }
            Self::Checkerboard { a, b, tile } => {
                let k = (x.x / tile).floor() as i64 + (x.y / tile).floor() as i64;
                Tensor::identity() * if k.rem_euclid(2) == 0 { *a } else { *b }
            }
            Self::LognormalRaster { raster, gamma } => {
                Tensor::identity() * (gamma * (10.0 * raster.sample(x)? / 255.0).exp())
            }
            Self::Piecewise { grid, tensors } => {
                let c = grid.locate(x).ok_or(Error::OutOfDomain {
                    x: x.x,
                    y: x.y,
                    region: "the coefficient grid",
                })?;
                tensors[c]
            }
        })
    }
}

pub fn is_symmetric(t: &Tensor) -> bool {
    t[(0, 1)] == t[(1, 0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Rect;

    #[test]
    fn constant_and_laminate_values() {
        let c = CoefficientField::isotropic(3.0);
        assert_eq!(c.eval(Point::new(0.2, 0.7)).unwrap(), Tensor::identity() * 3.0);
        let lam = CoefficientField::Laminate {
            direction: Axis::X,
            a: 1.0,
            b: 4.0,
            layer_width: 0.25,
        };
        assert_eq!(lam.eval(Point::new(0.1, 0.9)).unwrap(), Tensor::identity());
        assert_eq!(lam.eval(Point::new(0.3, 0.9)).unwrap(), Tensor::identity() * 4.0);
        let board = CoefficientField::Checkerboard {
            a: 1.0,
            b: 2.0,
            tile: 0.5,
        };
        assert_eq!(board.eval(Point::new(0.7, 0.2)).unwrap()[(0, 0)], 2.0);
        assert_eq!(board.eval(Point::new(0.7, 0.7)).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn lognormal_endpoints() {
        let r = RasterField::new(2, 1, Rect::unit(), RasterData::Gray(vec![0, 255])).unwrap();
        let f = CoefficientField::lognormal(r, 0.5);
        assert_eq!(f.eval(Point::new(0.25, 0.5)).unwrap(), Tensor::identity() * 0.5);
        let hi = f.eval(Point::new(0.75, 0.5)).unwrap();
        assert!((hi[(0, 0)] - 0.5 * 10f64.exp()).abs() <= 1e-12 * hi[(0, 0)]);
        assert!(f.eval(Point::new(1.5, 0.5)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn lognormal_tensors_are_symmetric_and_bounded(seed in 0u64..50, x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let r = gen_gaussian_raster(16, 16, Rect::unit(), 0.1, seed).unwrap();
            let t = CoefficientField::lognormal(r, 2.0).eval(Point::new(x, y)).unwrap();
            proptest::prop_assert!(is_symmetric(&t));
            let (lo, hi) = (t[(0, 0)].min(t[(1, 1)]), t[(0, 0)].max(t[(1, 1)]));
            proptest::prop_assert!(lo >= 2.0 && hi <= 2.0 * 10f64.exp() * (1.0 + 1e-15));
            proptest::prop_assert!(hi / lo <= 10f64.exp());
        }
    }
}
