use rayon::prelude::*;

use super::element::RefCell;
use super::{FeSpace, Functional, Source};
use crate::field::{AdvectionField, CoefficientField, Tensor, Vector};
use crate::mesh::{Grid, Rect};
use crate::quadrature::{gauss2x2, map_point};
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

pub type ElementMatrix = [[f64; 4]; 4];

/// Diffusion coefficient as seen by the assembler.
#[derive(Clone, Copy, Debug)]
pub enum Diffusion<'a> {
    Zero,
    Constant(Tensor),
    /// Fine-scale field, sampled at the midpoint of every micro subcell of
    /// size `micro` inside each element.
    Fine { field: &'a CoefficientField, micro: f64 },
    /// One tensor per cell of a coarser grid; constant on every element.
    Cellwise { grid: &'a Grid, tensors: &'a [Tensor] },
}

#[derive(Clone, Copy, Debug)]
pub enum Advection<'a> {
    Zero,
    /// Evaluated at the Gauss points of every micro subcell.
    Fine { field: &'a AdvectionField, micro: f64 },
    Cellwise { grid: &'a Grid, values: &'a [Vector] },
}

fn subdivision(cell: f64, micro: f64) -> Result<usize> {
    let r = cell / micro;
    let m = r.round();
    if m < 1.0 || (r - m).abs() > 1e-9 * m {
        return Err(Error::Divisibility {
            what: "micro size",
            into: "element size",
            fine: micro,
            coarse: cell,
        });
    }
    if m > 64.0 {
        return Err(Error::Config(format!("element holds {m} micro cells per side, at most 64 supported")));
    }
    Ok(m as usize)
}

fn cellwise_index(grid: &Grid, rect: &Rect) -> Result<usize> {
    let c = rect.center();
    grid.locate(c).ok_or(Error::OutOfDomain {
        x: c.x,
        y: c.y,
        region: "the coefficient grid",
    })
}

/// Element matrix `M[a][b] = (D grad phi_b, grad phi_a) + (beta . grad phi_b, phi_a)`
/// on a square element (`a` test, `b` trial).
pub fn element_matrix(rect: &Rect, diffusion: &Diffusion, advection: &Advection) -> Result<ElementMatrix> {
    let mut k = [[0.0; 4]; 4];
    let add_diffusion = |k: &mut ElementMatrix, rc: &RefCell, tensor_of: &dyn Fn(usize) -> Result<Tensor>| {
        for sub in 0..rc.m * rc.m {
            let t = tensor_of(sub)?;
            for p in rc.subcell_points(sub) {
                for b in 0..4 {
                    let g = p.grad[b];
                    let tg = [t[(0, 0)] * g[0] + t[(0, 1)] * g[1], t[(1, 0)] * g[0] + t[(1, 1)] * g[1]];
                    for a in 0..4 {
                        k[a][b] += p.weight * (p.grad[a][0] * tg[0] + p.grad[a][1] * tg[1]);
                    }
                }
            }
        }
        Ok::<(), Error>(())
    };
    match diffusion {
        Diffusion::Zero => {}
        Diffusion::Constant(t) => add_diffusion(&mut k, RefCell::get(1), &|_| Ok(*t))?,
        Diffusion::Cellwise { grid, tensors } => {
            let t = tensors[cellwise_index(grid, rect)?];
            add_diffusion(&mut k, RefCell::get(1), &|_| Ok(t))?
        }
        Diffusion::Fine { field, micro } => {
            let rc = RefCell::get(subdivision(rect.width(), *micro)?);
            add_diffusion(&mut k, rc, &|sub| {
                let (x, y) = rc.midpoints[sub];
                field.eval(map_point(rect, x, y))
            })?
        }
    }

    let s = rect.width();
    let mut add_advection = |rc: &RefCell, beta_at: &dyn Fn(f64, f64) -> Result<Vector>| {
        for p in &rc.points {
            let beta = beta_at(p.xi, p.eta)?;
            // Reference gradients carry 1/s, the measure s^2.
            for b in 0..4 {
                let bg = s * p.weight * (beta.x * p.grad[b][0] + beta.y * p.grad[b][1]);
                for a in 0..4 {
                    k[a][b] += p.n[a] * bg;
                }
            }
        }
        Ok::<(), Error>(())
    };
    match advection {
        Advection::Zero => {}
        Advection::Cellwise { grid, values } => {
            let v = values[cellwise_index(grid, rect)?];
            add_advection(RefCell::get(1), &|_, _| Ok(v))?
        }
        Advection::Fine { field, micro } => {
            if !field.is_zero() {
                let rc = RefCell::get(subdivision(rect.width(), *micro)?);
                add_advection(rc, &|x, y| field.eval(map_point(rect, x, y)))?
            }
        }
    }
    Ok(k)
}

/// Global matrix of `(D grad u, grad v) + (beta . grad u, v)`, row = test dof.
pub fn assemble(space: &FeSpace, diffusion: &Diffusion, advection: &Advection) -> Result<CsrMatrix> {
    let g = &space.grid;
    let locals: Vec<ElementMatrix> = (0..g.n_cells())
        .into_par_iter()
        .map(|c| element_matrix(&g.cell_rect(c), diffusion, advection))
        .collect::<Result<_>>()?;
    let mut triplets = Vec::with_capacity(16 * locals.len());
    for (c, k) in locals.iter().enumerate() {
        let dofs = space.cell_dofs(c);
        for a in 0..4 {
            for b in 0..4 {
                triplets.push((dofs[a], dofs[b], k[a][b]));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(space.n_dofs(), &triplets))
}

pub fn assemble_diffusion(space: &FeSpace, diffusion: &Diffusion) -> Result<CsrMatrix> {
    assemble(space, diffusion, &Advection::Zero)
}

pub fn assemble_advection(space: &FeSpace, advection: &Advection) -> Result<CsrMatrix> {
    assemble(space, &Diffusion::Zero, advection)
}

/// Load vector `(f, phi) + sum over Neumann parts of (g, phi)_Gamma`.
pub fn assemble_rhs(space: &FeSpace, source: &Source, neumann: &[(String, f64)]) -> Result<Vec<f64>> {
    let g = &space.grid;
    let mut f = vec![0.0; space.n_dofs()];
    if !source.is_zero() {
        let area = g.spacing * g.spacing;
        let locals: Vec<[f64; 4]> = (0..g.n_cells())
            .into_par_iter()
            .map(|c| {
                let r = g.cell_rect(c);
                let mut local = [0.0; 4];
                for (xi, eta, w) in gauss2x2() {
                    let v = source.eval(map_point(&r, xi, eta)) * w * area;
                    let n = super::element::shape(xi, eta).0;
                    for a in 0..4 {
                        local[a] += v * n[a];
                    }
                }
                local
            })
            .collect();
        for (c, local) in locals.iter().enumerate() {
            for (d, v) in space.cell_dofs(c).iter().zip(local) {
                f[*d] += v;
            }
        }
    }
    for (marker, flux) in neumann {
        if !space.domain.has_marker(marker) {
            return Err(Error::UnknownMarker(marker.clone()));
        }
        for (a, b) in g.boundary_edges() {
            if space.domain.edge_marker(g.node_point(a), g.node_point(b)) == Some(marker.as_str()) {
                let half = 0.5 * flux * g.spacing;
                f[space.dof(a)] += half;
                f[space.dof(b)] += half;
            }
        }
    }
    Ok(f)
}

/// Vector `j_nu = <j, phi_nu>`. With `local` set the space may cover only
/// part of the domain and a point outside it contributes nothing.
pub fn functional_vector_on(space: &FeSpace, j: &Functional, local: bool) -> Result<Vec<f64>> {
    let g = &space.grid;
    let mut v = vec![0.0; space.n_dofs()];
    match j {
        Functional::Zero => {}
        Functional::DomainIntegral => {
            let q = 0.25 * g.spacing * g.spacing;
            for c in 0..g.n_cells() {
                for d in space.cell_dofs(c) {
                    v[d] += q;
                }
            }
        }
        Functional::PointValue(x0) => match space.interpolation_weights(*x0) {
            Ok((cell, w)) => {
                for (d, w) in space.cell_dofs(cell).iter().zip(w) {
                    v[*d] += w;
                }
            }
            Err(e) if !local => return Err(e),
            Err(_) => {}
        },
        Functional::BoundaryIntegral(marker) => {
            if !space.domain.has_marker(marker) {
                return Err(Error::UnknownMarker(marker.clone()));
            }
            for (a, b) in g.boundary_edges() {
                if space.domain.edge_marker(g.node_point(a), g.node_point(b)) == Some(marker.as_str()) {
                    v[space.dof(a)] += 0.5 * g.spacing;
                    v[space.dof(b)] += 0.5 * g.spacing;
                }
            }
        }
        Functional::Scaled { factor, inner } => {
            v = functional_vector_on(space, inner, local)?;
            v.iter_mut().for_each(|x| *x *= factor);
        }
    }
    Ok(v)
}

pub fn functional_vector(space: &FeSpace, j: &Functional) -> Result<Vec<f64>> {
    functional_vector_on(space, j, false)
}

pub fn apply_functional(space: &FeSpace, j: &Functional, u: &[f64]) -> Result<f64> {
    if u.len() != space.n_dofs() {
        return Err(Error::Dimension {
            expected: space.n_dofs(),
            found: u.len(),
        });
    }
    Ok(functional_vector(space, j)?.iter().zip(u).map(|(a, b)| a * b).sum())
}
