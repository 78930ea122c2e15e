//! Effective per-cell tensors and the upscaling rules that produce initial
//! models.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::fem::{assemble_diffusion, BoundaryConditions, Diffusion, FeSpace, SparseOperator};
use crate::field::{CoefficientField, Tensor};
use crate::mesh::{Domain, Grid, MeshHierarchy};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Constant,
    Arithmetic,
    Geometric,
    Homogenized,
    Imported,
    Optimized(usize),
}

/// One constant tensor per sampling cell. Ellipticity is not enforced.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveModel {
    pub sampling: Grid,
    pub tensors: Vec<Tensor>,
    pub provenance: Provenance,
}

impl EffectiveModel {
    pub fn new(sampling: Grid, tensors: Vec<Tensor>, provenance: Provenance) -> Result<Self> {
        if tensors.len() != sampling.n_cells() {
            return Err(Error::Dimension {
                expected: sampling.n_cells(),
                found: tensors.len(),
            });
        }
        if let Some(k) = tensors.iter().position(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical(format!("non-finite tensor in sampling cell {k}")));
        }
        Ok(Self {
            sampling,
            tensors,
            provenance,
        })
    }

    pub fn constant(sampling: Grid, t: Tensor) -> Self {
        Self {
            tensors: vec![t; sampling.n_cells()],
            sampling,
            provenance: Provenance::Constant,
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn diffusion(&self) -> Diffusion<'_> {
        Diffusion::Cellwise {
            grid: &self.sampling,
            tensors: &self.tensors,
        }
    }

    /// `sqrt(sum_K |A_K|_F^2)`.
    pub fn norm(&self) -> f64 {
        self.tensors.iter().map(|t| t.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &EffectiveModel) -> f64 {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_symmetric(&self) -> bool {
        self.tensors.iter().all(crate::field::is_symmetric)
    }

    /// As a fine-scale field constant on sampling cells.
    pub fn as_field(&self) -> CoefficientField {
        CoefficientField::piecewise(self.sampling, self.tensors.clone()).unwrap()
    }

    /// Smallest eigenvalue of each symmetric part.
    pub fn min_eigenvalues(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .map(|t| {
                let s = (t + t.transpose()) * 0.5;
                s.symmetric_eigenvalues().min()
            })
            .collect()
    }

    /// Columns `cell_i,cell_j,a11,a12,a21,a22`, 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("cell_i,cell_j,a11,a12,a21,a22\n");
        for (k, t) in self.tensors.iter().enumerate() {
            let (i, j) = self.sampling.cell_ij(k);
            writeln!(
                out,
                "{i},{j},{:.16e},{:.16e},{:.16e},{:.16e}",
                t[(0, 0)],
                t[(0, 1)],
                t[(1, 0)],
                t[(1, 1)]
            )
            .unwrap();
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path, sampling: Grid) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut tensors = vec![None; sampling.n_cells()];
        for (n, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
            let parse_err = |what: &str| Error::Parse(format!("model CSV line {}: {what}", n + 1));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 6 {
                return Err(parse_err("expected 6 columns"));
            }
            let i: usize = f[0].parse().map_err(|_| parse_err("bad cell_i"))?;
            let j: usize = f[1].parse().map_err(|_| parse_err("bad cell_j"))?;
            if i >= sampling.nx || j >= sampling.ny {
                return Err(parse_err("cell index out of range"));
            }
            let mut v = [0.0; 4];
            for (slot, s) in v.iter_mut().zip(&f[2..]) {
                *slot = s.parse().map_err(|_| parse_err("bad tensor entry"))?;
            }
            tensors[sampling.cell_index(i, j)] = Some(Tensor::new(v[0], v[1], v[2], v[3]));
        }
        let tensors = tensors
            .into_iter()
            .enumerate()
            .map(|(k, t)| t.ok_or_else(|| Error::Parse(format!("model CSV misses cell {k}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(sampling, tensors, Provenance::Imported)
    }
}

/// Tensors of `field` at the midpoints of the micro cells of sampling cell `k`.
fn micro_samples(field: &CoefficientField, mesh: &MeshHierarchy, k: usize) -> Result<(Grid, Vec<Tensor>)> {
    let grid = mesh.micro_grid(&mesh.region(k)?.y_cell)?;
    let samples = (0..grid.n_cells())
        .map(|c| field.eval(grid.cell_rect(c).center()))
        .collect::<Result<_>>()?;
    Ok((grid, samples))
}

pub fn arithmetic_mean_model(field: &CoefficientField, mesh: &MeshHierarchy) -> Result<EffectiveModel> {
    let tensors = (0..mesh.sampling_count())
        .into_par_iter()
        .map(|k| {
            let (_, s) = micro_samples(field, mesh, k)?;
            Ok(s.iter().sum::<Tensor>() / s.len() as f64)
        })
        .collect::<Result<_>>()?;
    EffectiveModel::new(mesh.sampling, tensors, Provenance::Arithmetic)
}

/// Geometric mean on the diagonal, arithmetic mean off the diagonal.
pub fn geometric_mean_model(field: &CoefficientField, mesh: &MeshHierarchy) -> Result<EffectiveModel> {
    let tensors = (0..mesh.sampling_count())
        .into_par_iter()
        .map(|k| {
            let (grid, s) = micro_samples(field, mesh, k)?;
            let n = s.len() as f64;
            let mut out = s.iter().sum::<Tensor>() / n;
            for d in 0..2 {
                let mut log_sum = 0.0;
                for (c, t) in s.iter().enumerate() {
                    let v = t[(d, d)];
                    if !(v > 0.0) {
                        let p = grid.cell_rect(c).center();
                        return Err(Error::NonPositive {
                            cell: k,
                            x: p.x,
                            y: p.y,
                            value: v,
                        });
                    }
                    log_sum += v.ln();
                }
                out[(d, d)] = (log_sum / n).exp();
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    EffectiveModel::new(mesh.sampling, tensors, Provenance::Geometric)
}

/// Homogenized tensor of sampling cell `k` from two periodic cell problems
/// on its micro grid.
pub fn homogenized_tensor(field: &CoefficientField, mesh: &MeshHierarchy, k: usize) -> Result<Tensor> {
    let grid = mesh.micro_grid(&mesh.region(k)?.y_cell)?;
    homogenize_on(field, grid, mesh.micro)
}

pub fn homogenize_on(field: &CoefficientField, grid: Grid, micro: f64) -> Result<Tensor> {
    let rect = grid.rect();
    let open = FeSpace::new(
        grid,
        &Domain::new(rect.min, rect.width(), rect.height())?,
        &BoundaryConditions::default(),
    )?;
    let stiffness = assemble_diffusion(&open, &Diffusion::Fine { field, micro })?;
    let periodic = Arc::new(FeSpace::periodic(grid));
    let per_matrix = assemble_diffusion(&periodic, &Diffusion::Fine { field, micro })?;
    let op = SparseOperator::new(per_matrix, periodic.clone())?;

    // Corrected coordinate functions x_i + omega_i on the open grid.
    let mut chi = Vec::with_capacity(2);
    for i in 0..2 {
        let x = open.interpolate(|p| if i == 0 { p.x - rect.min.x } else { p.y - rect.min.y });
        let kx = stiffness.mul_vec(&x);
        let mut rhs = vec![0.0; periodic.n_dofs()];
        for (node, v) in kx.iter().enumerate() {
            rhs[periodic.dof(node)] -= v;
        }
        let mut omega = op.solve_homogeneous(&rhs)?;
        let mean = omega.iter().sum::<f64>() / omega.len() as f64;
        omega.iter_mut().for_each(|w| *w -= mean);
        let omega_nodes = periodic.nodal(&omega);
        chi.push(x.iter().zip(&omega_nodes).map(|(a, b)| a + b).collect::<Vec<_>>());
    }
    let area = rect.area();
    let mut t = Tensor::zeros();
    for i in 0..2 {
        for j in 0..2 {
            t[(i, j)] = stiffness.bilinear(&chi[j], &chi[i]) / area;
        }
    }
    Ok(t)
}

pub fn homogenized_model(field: &CoefficientField, mesh: &MeshHierarchy) -> Result<EffectiveModel> {
    let tensors = (0..mesh.sampling_count())
        .into_par_iter()
        .map(|k| homogenized_tensor(field, mesh, k))
        .collect::<Result<_>>()?;
    EffectiveModel::new(mesh.sampling, tensors, Provenance::Homogenized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{gen_gaussian_raster, Axis, RasterField};
    use crate::mesh::{build_hierarchy, Rect};

    fn mesh(delta: f64, h: f64) -> MeshHierarchy {
        build_hierarchy(Domain::unit_square(), delta, delta, h).unwrap()
    }

    fn close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
        (a - b).abs().max() <= tol * b.abs().max()
    }

    #[test]
    fn constant_field_is_reproduced_by_every_rule() {
        let m = mesh(0.5, 1.0 / 16.0);
        let c = Tensor::identity() * 3.0;
        let f = CoefficientField::Constant(c);
        for model in [
            arithmetic_mean_model(&f, &m).unwrap(),
            geometric_mean_model(&f, &m).unwrap(),
            homogenized_model(&f, &m).unwrap(),
        ] {
            assert!(model.tensors.iter().all(|t| close(t, &c, 1e-12)), "{:?}", model.provenance);
        }
    }

    #[test]
    fn checkerboard_means() {
        let m = mesh(0.5, 1.0 / 32.0);
        let f = CoefficientField::Checkerboard { a: 1.0, b: 4.0, tile: 0.125 };
        let am = arithmetic_mean_model(&f, &m).unwrap();
        let gm = geometric_mean_model(&f, &m).unwrap();
        for (a, g) in am.tensors.iter().zip(&gm.tensors) {
            assert!(close(a, &(Tensor::identity() * 2.5), 1e-14));
            assert!(close(g, &(Tensor::identity() * 2.0), 1e-14));
        }
    }

    #[test]
    fn laminate_homogenization() {
        let m = mesh(0.5, 1.0 / 32.0);
        for (dir, expect) in [(Axis::X, Tensor::new(1.6, 0.0, 0.0, 2.5)), (Axis::Y, Tensor::new(2.5, 0.0, 0.0, 1.6))] {
            let f = CoefficientField::Laminate { direction: dir, a: 1.0, b: 4.0, layer_width: 0.0625 };
            for k in 0..m.sampling_count() {
                let t = homogenized_tensor(&f, &m, k).unwrap();
                assert!((t - expect).abs().max() <= 1e-10, "{t}");
            }
            let am = arithmetic_mean_model(&f, &m).unwrap();
            assert!(close(&am.tensors[0], &(Tensor::identity() * 2.5), 1e-14));
        }
    }

    #[test]
    fn lognormal_geometric_mean_matches_pixel_average() {
        let m = mesh(0.25, 1.0 / 64.0);
        let r = gen_gaussian_raster(16, 16, Rect::unit(), 0.1, 4).unwrap();
        let gm = geometric_mean_model(&CoefficientField::lognormal(r.clone(), 0.5), &m).unwrap();
        for k in 0..m.sampling_count() {
            let (ki, kj) = m.sampling.cell_ij(k);
            let mut sum = 0.0;
            for j in 4 * kj..4 * kj + 4 {
                for i in 4 * ki..4 * ki + 4 {
                    sum += r.value(i, j);
                }
            }
            let expect = 0.5 * (10.0 * sum / 16.0 / 255.0).exp();
            assert!((gm.tensors[k][(0, 0)] - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn isotropic_bounds_hold() {
        let m = mesh(0.5, 1.0 / 32.0);
        let r = gen_gaussian_raster(32, 32, Rect::unit(), 0.05, 9).unwrap();
        let f = CoefficientField::lognormal(r, 1.0);
        let am = arithmetic_mean_model(&f, &m).unwrap();
        let gm = geometric_mean_model(&f, &m).unwrap();
        let hm = homogenized_model(&f, &m).unwrap();
        for k in 0..m.sampling_count() {
            let (_, s) = micro_samples(&f, &m, k).unwrap();
            let harmonic = s.len() as f64 / s.iter().map(|t| 1.0 / t[(0, 0)]).sum::<f64>();
            let arith = am.tensors[k][(0, 0)];
            let t = hm.tensors[k];
            assert!((t[(0, 1)] - t[(1, 0)]).abs() <= 1e-10 * t.abs().max());
            for d in 0..2 {
                assert!(harmonic <= t[(d, d)] * (1.0 + 1e-12) && t[(d, d)] <= arith * (1.0 + 1e-12));
            }
            assert!(gm.tensors[k][(0, 0)] <= arith);
        }
    }

    #[test]
    fn nonpositive_samples_are_reported() {
        let m = mesh(0.5, 0.125);
        let f = CoefficientField::Checkerboard { a: 1.0, b: -1.0, tile: 0.25 };
        assert!(matches!(geometric_mean_model(&f, &m), Err(Error::NonPositive { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let m = mesh(0.25, 0.125);
        let r = RasterField::from_fn(8, 8, Rect::unit(), |i, j| ((i * 7 + j * 3) % 11) as f64 * 0.37);
        let f = CoefficientField::lognormal(r, 0.3);
        let model = arithmetic_mean_model(&f, &m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.csv");
        model.write_csv(&p).unwrap();
        let back = EffectiveModel::read_csv(&p, m.sampling).unwrap();
        assert_eq!(back.tensors, model.tensors);
    }

    #[test]
    fn cellwise_constant_field_homogenizes_to_itself() {
        let m = mesh(0.25, 1.0 / 32.0);
        let t: Vec<Tensor> = (0..16).map(|k| Tensor::new(1.0 + k as f64, 0.2, 0.2, 3.0)).collect();
        let f = CoefficientField::piecewise(m.sampling, t.clone()).unwrap();
        let hm = homogenized_model(&f, &m).unwrap();
        for (a, b) in hm.tensors.iter().zip(&t) {
            assert!(close(a, b, 1e-10));
        }
    }
}
