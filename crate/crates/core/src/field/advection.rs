use super::{RasterField, Vector};
use crate::mesh::{MeshHierarchy, Point, Rect};
use crate::quadrature::{gauss2x2, map_point};
use crate::{Error, Result};

/// Bilinear interpolant of nodal stream-function values on a lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamFunction {
    pub extent: Rect,
    /// Number of pieces per axis (one less than the sample count).
    pub nx: usize,
    pub ny: usize,
    /// Tapered nodal values, row-major from the bottom.
    pub nodal: Vec<f64>,
    pub scale: f64,
}

impl StreamFunction {
    pub fn piece_size(&self) -> (f64, f64) {
        (self.extent.width() / self.nx as f64, self.extent.height() / self.ny as f64)
    }

    fn node(&self, i: usize, j: usize) -> f64 {
        self.nodal[j * (self.nx + 1) + i]
    }

    fn locate(&self, p: Point) -> Result<(usize, usize, f64, f64)> {
        let tol = 1e-10 * self.extent.width().max(self.extent.height());
        if !self.extent.contains(p, tol) {
            return Err(Error::OutOfDomain {
                x: p.x,
                y: p.y,
                region: "the advection field extent",
            });
        }
        let (dx, dy) = self.piece_size();
        let axis = |t: f64, n: usize| {
            let c = t.ceil();
            let k = if (t - c).abs() < 1e-12 { c - 1.0 } else { t.floor() };
            let k = (k.max(0.0) as usize).min(n - 1);
            (k, t - k as f64)
        };
        let (i, xi) = axis((p.x - self.extent.min.x) / dx, self.nx);
        let (j, eta) = axis((p.y - self.extent.min.y) / dy, self.ny);
        Ok((i, j, xi, eta))
    }

    fn velocity_in(&self, i: usize, j: usize, xi: f64, eta: f64) -> Vector {
        let (dx, dy) = self.piece_size();
        let (p00, p10, p01, p11) = (
            self.node(i, j),
            self.node(i + 1, j),
            self.node(i, j + 1),
            self.node(i + 1, j + 1),
        );
        let dpsi_dx = ((p10 - p00) * (1.0 - eta) + (p11 - p01) * eta) / dx;
        let dpsi_dy = ((p01 - p00) * (1.0 - xi) + (p11 - p10) * xi) / dy;
        Vector::new(dpsi_dy, -dpsi_dx) * self.scale
    }

    pub fn psi(&self, p: Point) -> Result<f64> {
        let (i, j, xi, eta) = self.locate(p)?;
        Ok(self.node(i, j) * (1.0 - xi) * (1.0 - eta)
            + self.node(i + 1, j) * xi * (1.0 - eta)
            + self.node(i, j + 1) * (1.0 - xi) * eta
            + self.node(i + 1, j + 1) * xi * eta)
    }

    /// Exact `max |b|`: each velocity component is affine in one variable per
    /// piece, so the maximum sits at a piece corner.
    pub fn peak(&self) -> f64 {
        let mut m: f64 = 0.0;
        for j in 0..self.ny {
            for i in 0..self.nx {
                for (xi, eta) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
                    m = m.max(self.velocity_in(i, j, xi, eta).norm());
                }
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AdvectionField {
    Zero,
    Constant(Vector),
    Stream(StreamFunction),
}

impl AdvectionField {
    pub fn eval(&self, p: Point) -> Result<Vector> {
        match self {
            Self::Zero => Ok(Vector::zeros()),
            Self::Constant(b) => Ok(*b),
            Self::Stream(s) => {
                let (i, j, xi, eta) = s.locate(p)?;
                Ok(s.velocity_in(i, j, xi, eta))
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Zero => true,
            Self::Constant(b) => *b == Vector::zeros(),
            Self::Stream(s) => s.scale == 0.0 || s.nodal.iter().all(|&v| v == 0.0),
        }
    }

    pub fn peak(&self) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Constant(b) => b.norm(),
            Self::Stream(s) => s.peak(),
        }
    }

    /// Rescales so that `max |b|` equals `target` (no-op for a zero field).
    pub fn with_peak(self, target: f64) -> Self {
        let p = self.peak();
        if p == 0.0 {
            return self;
        }
        match self {
            Self::Zero => Self::Zero,
            Self::Constant(b) => Self::Constant(b * (target / p)),
            Self::Stream(mut s) => {
                s.scale *= target / p;
                Self::Stream(s)
            }
        }
    }
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Divergence-free advection `b = scale * (d_y psi, -d_x psi)` from raster
/// samples of `psi` placed at the nodes of a lattice spanning the raster
/// extent. Nodal values are damped to zero within one lattice spacing of the
/// boundary and rise to full size over `taper_width`.
pub fn stream_advection(psi: &RasterField, scale: f64, taper_width: f64) -> Result<AdvectionField> {
    let ext = psi.extent;
    if psi.nx < 2 || psi.ny < 2 {
        return Err(Error::Config("stream raster needs at least 2 x 2 samples".into()));
    }
    if !(taper_width > 0.0) || taper_width >= 0.5 * ext.width().min(ext.height()) {
        return Err(Error::Config(format!(
            "taper width {taper_width} must lie in (0, min(extent)/2)"
        )));
    }
    let (nx, ny) = (psi.nx - 1, psi.ny - 1);
    let dx = ext.width() / nx as f64;
    let dy = ext.height() / ny as f64;
    let cut = |dist: f64, spacing: f64| {
        if dist <= spacing * (1.0 + 1e-9) {
            0.0
        } else {
            smoothstep((dist - spacing) / taper_width)
        }
    };
    let mut nodal = Vec::with_capacity(psi.nx * psi.ny);
    for j in 0..=ny {
        for i in 0..=nx {
            let (x, y) = (i as f64 * dx, j as f64 * dy);
            let c = cut(x, dx) * cut(ext.width() - x, dx) * cut(y, dy) * cut(ext.height() - y, dy);
            nodal.push(c * psi.value(i, j));
        }
    }
    Ok(AdvectionField::Stream(StreamFunction {
        extent: ext,
        nx,
        ny,
        nodal,
        scale,
    }))
}

/// Cell averages of `b` over the sampling cells, by 2x2 Gauss quadrature on
/// every micro subcell.
pub fn average_advection(b: &AdvectionField, mesh: &MeshHierarchy) -> Result<Vec<Vector>> {
    let n = mesh.micro_per_sampling();
    (0..mesh.sampling_count())
        .map(|k| {
            let region = mesh.region(k)?;
            let grid = mesh.micro_grid(&region.bbox)?;
            debug_assert_eq!(grid.n_cells(), n * n);
            let mut sum = Vector::zeros();
            for c in 0..grid.n_cells() {
                let r = grid.cell_rect(c);
                for (xi, eta, w) in gauss2x2() {
                    sum += b.eval(map_point(&r, xi, eta))? * w;
                }
            }
            Ok(sum / (n * n) as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::gen_gaussian_raster;
    use crate::mesh::{build_hierarchy, Domain};

    fn channel_stream(seed: u64) -> AdvectionField {
        let ext = Rect::new(Point::origin(), 1.0, 2.0);
        let r = gen_gaussian_raster(17, 33, ext, 0.15, seed).unwrap();
        stream_advection(&r, 1.0, 0.2).unwrap().with_peak(100.0)
    }

    #[test]
    fn constant_stream_gives_zero_velocity() {
        let r = RasterField::constant(9, 9, Rect::unit(), 3.0);
        let b = stream_advection(&r, 5.0, 0.2).unwrap();
        // Taper makes psi nonconstant near the boundary, the interior plateau is flat.
        assert_eq!(b.eval(Point::new(0.5, 0.5)).unwrap(), Vector::zeros());
        let flat = RasterField::constant(9, 9, Rect::unit(), 0.0);
        assert!(stream_advection(&flat, 5.0, 0.2).unwrap().is_zero());
    }

    #[test]
    fn vanishes_on_the_boundary() {
        let b = channel_stream(1);
        for k in 0..=50 {
            let t = k as f64 / 50.0;
            for p in [
                Point::new(t, 0.0),
                Point::new(t, 2.0),
                Point::new(0.0, 2.0 * t),
                Point::new(1.0, 2.0 * t),
            ] {
                assert_eq!(b.eval(p).unwrap(), Vector::zeros(), "{p}");
            }
        }
        assert!((b.peak() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_taper_is_rejected() {
        let r = RasterField::constant(9, 9, Rect::unit(), 1.0);
        assert!(stream_advection(&r, 1.0, 0.0).is_err());
        assert!(stream_advection(&r, 1.0, 0.5).is_err());
    }

    #[test]
    fn divergence_probe() {
        let b = channel_stream(4);
        let AdvectionField::Stream(s) = &b else { unreachable!() };
        let (dx, dy) = s.piece_size();
        let h: f64 = 1.0 / 128.0;
        let peak = b.peak();
        let mut worst: f64 = 0.0;
        for a in 1..100 {
            for c in 1..100 {
                let p = Point::new(a as f64 / 100.0, 2.0 * c as f64 / 100.0);
                let gx = (p.x / dx - (p.x / dx).round()).abs() * dx;
                let gy = (p.y / dy - (p.y / dy).round()).abs() * dy;
                if gx < 1e-12 || gy < 1e-12 {
                    continue;
                }
                let st = (h / 2.0_f64).min(gx / 2.0).min(gy / 2.0);
                let e = |ox: f64, oy: f64| b.eval(Point::new(p.x + ox, p.y + oy)).unwrap();
                let div = (e(st, 0.0).x - e(-st, 0.0).x + e(0.0, st).y - e(0.0, -st).y) / (2.0 * st);
                worst = worst.max(div.abs());
            }
        }
        assert!(worst <= 1e-8 * peak, "divergence {worst}");
    }

    #[test]
    fn averages() {
        let mesh = build_hierarchy(Domain::channel(), 0.25, 0.125, 1.0 / 64.0).unwrap();
        let c = AdvectionField::Constant(Vector::new(2.0, -1.0));
        for v in average_advection(&c, &mesh).unwrap() {
            assert!((v - Vector::new(2.0, -1.0)).norm() < 1e-14);
        }
        // psi vanishes on the whole boundary, so the mean over the domain is zero.
        let sq = build_hierarchy(Domain::unit_square(), 1.0, 0.25, 1.0 / 64.0).unwrap();
        let r = gen_gaussian_raster(17, 17, Rect::unit(), 0.15, 9).unwrap();
        let b = stream_advection(&r, 1.0, 0.2).unwrap().with_peak(50.0);
        let avg = average_advection(&b, &sq).unwrap();
        assert_eq!(avg.len(), 1);
        assert!(avg[0].norm() <= 1e-12 * 50.0, "{}", avg[0]);
        // psi = (x - 1/2)(y - 1/2) gives b = (x - 1/2, 1/2 - y), odd about the center.
        let odd = AdvectionField::Stream(StreamFunction {
            extent: Rect::unit(),
            nx: 1,
            ny: 1,
            nodal: vec![0.25, -0.25, -0.25, 0.25],
            scale: 1.0,
        });
        let v = odd.eval(Point::new(0.75, 0.25)).unwrap();
        assert!((v - Vector::new(0.25, 0.25)).norm() < 1e-15);
        assert!(average_advection(&odd, &sq).unwrap()[0].norm() < 1e-15);
    }
}
