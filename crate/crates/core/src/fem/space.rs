use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::mesh::{Domain, Grid, Point, Rect};
use crate::{Error, Result};

/// Boundary data of a scalar problem by marker name. Markers not listed
/// carry homogeneous Neumann conditions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundaryConditions {
    pub dirichlet: Vec<(String, f64)>,
    pub neumann: Vec<(String, f64)>,
}

impl BoundaryConditions {
    pub fn dirichlet_all(domain: &Domain, value: f64) -> Self {
        Self {
            dirichlet: domain.marker_names().into_iter().map(|m| (m.to_string(), value)).collect(),
            neumann: Vec::new(),
        }
    }

    pub fn dirichlet_value(&self, marker: &str) -> Option<f64> {
        self.dirichlet.iter().find(|(m, _)| m == marker).map(|(_, v)| *v)
    }

    pub fn check(&self, domain: &Domain) -> Result<()> {
        for (m, _) in self.dirichlet.iter().chain(&self.neumann) {
            if !domain.has_marker(m) {
                return Err(Error::UnknownMarker(m.clone()));
            }
        }
        Ok(())
    }
}

/// Q1 space on a uniform grid.
#[derive(Clone, Debug)]
pub struct FeSpace {
    pub grid: Grid,
    /// The global domain; boundary markers are looked up there.
    pub domain: Domain,
    /// Node to dof; the identity except for periodic spaces.
    dof_of_node: Option<Vec<usize>>,
    n_dofs: usize,
    pub dirichlet: BTreeMap<usize, f64>,
}

impl FeSpace {
    /// Space on `grid` (which must lie inside `domain`) with Dirichlet nodes
    /// on boundary edges whose marker has a Dirichlet value. A node shared by
    /// two Dirichlet markers takes the value listed first.
    pub fn new(grid: Grid, domain: &Domain, bc: &BoundaryConditions) -> Result<Self> {
        bc.check(domain)?;
        let mut dirichlet = BTreeMap::new();
        let mut ranked: Vec<(usize, usize, f64)> = Vec::new();
        for (a, b) in grid.boundary_edges() {
            let (pa, pb) = (grid.node_point(a), grid.node_point(b));
            if let Some(marker) = domain.edge_marker(pa, pb) {
                if let Some(rank) = bc.dirichlet.iter().position(|(m, _)| m == marker) {
                    let v = bc.dirichlet[rank].1;
                    ranked.push((rank, a, v));
                    ranked.push((rank, b, v));
                }
            }
        }
        ranked.sort_by_key(|&(rank, node, _)| (rank, node));
        for (_, node, v) in ranked {
            dirichlet.entry(node).or_insert(v);
        }
        Ok(Self {
            grid,
            domain: domain.clone(),
            dof_of_node: None,
            n_dofs: grid.n_nodes(),
            dirichlet,
        })
    }

    /// Space on a sub-rectangle of the domain: homogeneous Dirichlet on
    /// boundary parts inside the domain and on Dirichlet parts of the domain
    /// boundary, natural conditions on its Neumann parts.
    pub fn patch(grid: Grid, domain: &Domain, bc: &BoundaryConditions) -> Result<Self> {
        let mut space = Self::new(grid, domain, bc)?;
        for v in space.dirichlet.values_mut() {
            *v = 0.0;
        }
        for (a, b) in grid.boundary_edges() {
            if domain.edge_marker(grid.node_point(a), grid.node_point(b)).is_none() {
                space.dirichlet.insert(a, 0.0);
                space.dirichlet.insert(b, 0.0);
            }
        }
        Ok(space)
    }

    /// Periodic space on `rect` (opposite sides identified) with dof 0 pinned.
    pub fn periodic(grid: Grid) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let mut map = Vec::with_capacity(grid.n_nodes());
        for j in 0..=ny {
            for i in 0..=nx {
                map.push((j % ny) * nx + (i % nx));
            }
        }
        let rect = grid.rect();
        Self {
            grid,
            domain: Domain::new(rect.min, rect.width(), rect.height()).unwrap(),
            dof_of_node: Some(map),
            n_dofs: nx * ny,
            dirichlet: BTreeMap::from([(0, 0.0)]),
        }
    }

    /// Same space with all Dirichlet values set to zero.
    pub fn homogeneous(&self) -> Self {
        let mut s = self.clone();
        s.dirichlet.values_mut().for_each(|v| *v = 0.0);
        s
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn is_periodic(&self) -> bool {
        self.dof_of_node.is_some()
    }

    pub fn dof(&self, node: usize) -> usize {
        match &self.dof_of_node {
            Some(map) => map[node],
            None => node,
        }
    }

    pub fn cell_dofs(&self, cell: usize) -> [usize; 4] {
        self.grid.cell_nodes(cell).map(|n| self.dof(n))
    }

    pub fn is_dirichlet(&self, dof: usize) -> bool {
        self.dirichlet.contains_key(&dof)
    }

    pub fn rect(&self) -> Rect {
        self.grid.rect()
    }

    /// Value of the Q1 function with dof values `u` at `p`.
    pub fn eval(&self, u: &[f64], p: Point) -> Result<f64> {
        let (cell, w) = self.interpolation_weights(p)?;
        Ok(self.cell_dofs(cell).iter().zip(w).map(|(&d, w)| w * u[d]).sum())
    }

    pub fn interpolation_weights(&self, p: Point) -> Result<(usize, [f64; 4])> {
        let cell = self.grid.locate(p).ok_or(Error::OutOfDomain {
            x: p.x,
            y: p.y,
            region: "the finite-element mesh",
        })?;
        let r = self.grid.cell_rect(cell);
        let xi = ((p.x - r.min.x) / r.width()).clamp(0.0, 1.0);
        let eta = ((p.y - r.min.y) / r.height()).clamp(0.0, 1.0);
        Ok((cell, super::element::shape(xi, eta).0))
    }

    /// Dof vector of the nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn(Point) -> f64) -> Vec<f64> {
        let mut u = vec![0.0; self.n_dofs];
        for node in 0..self.grid.n_nodes() {
            u[self.dof(node)] = f(self.grid.node_point(node));
        }
        u
    }

    /// Nodal values (expands periodic dofs).
    pub fn nodal(&self, u: &[f64]) -> Vec<f64> {
        (0..self.grid.n_nodes()).map(|n| u[self.dof(n)]).collect()
    }
}

/// Prolongation of a Q1 function from `coarse` to `fine` node values;
/// exact when the grids are nested.
pub fn prolongate(coarse: &FeSpace, u: &[f64], fine: &Grid) -> Result<Vec<f64>> {
    (0..fine.n_nodes()).map(|n| coarse.eval(u, fine.node_point(n))).collect()
}

/// L2 norm of the Q1 function with node values `v` on `grid`.
pub fn l2_norm(grid: &Grid, v: &[f64]) -> f64 {
    let area = grid.spacing * grid.spacing;
    let mut sum = 0.0;
    for cell in 0..grid.n_cells() {
        let nodes = grid.cell_nodes(cell);
        for (xi, eta, w) in crate::quadrature::gauss2x2() {
            let n = super::element::shape(xi, eta).0;
            let val: f64 = nodes.iter().zip(n).map(|(&a, n)| v[a] * n).sum();
            sum += w * area * val * val;
        }
    }
    sum.sqrt()
}

/// Coefficients of a Q1 function together with its space.
#[derive(Clone, Debug)]
pub struct DiscreteField {
    pub space: Arc<FeSpace>,
    pub values: Vec<f64>,
}

impl DiscreteField {
    pub fn new(space: Arc<FeSpace>, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.n_dofs() {
            return Err(Error::Dimension {
                expected: space.n_dofs(),
                found: values.len(),
            });
        }
        Ok(Self { space, values })
    }

    pub fn zeros(space: Arc<FeSpace>) -> Self {
        let n = space.n_dofs();
        Self {
            space,
            values: vec![0.0; n],
        }
    }

    pub fn eval(&self, p: Point) -> Result<f64> {
        self.space.eval(&self.values, p)
    }

    /// `x,y,value` per node.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let g = &self.space.grid;
        let mut out = String::from("x,y,value\n");
        for (n, v) in self.space.nodal(&self.values).iter().enumerate() {
            let p = g.node_point(n);
            writeln!(out, "{:.16e},{:.16e},{:.16e}", p.x, p.y, v).unwrap();
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Legacy-format VTK rectilinear grid with point data `name`.
    pub fn write_vtk(&self, path: &Path, name: &str) -> Result<()> {
        let g = &self.space.grid;
        let mut out = String::new();
        writeln!(out, "# vtk DataFile Version 3.0\n{name}\nASCII\nDATASET RECTILINEAR_GRID").unwrap();
        writeln!(out, "DIMENSIONS {} {} 1", g.nx + 1, g.ny + 1).unwrap();
        let coords = |n: usize, o: f64| -> String {
            (0..=n)
                .map(|i| format!("{:.16e}", o + i as f64 * g.spacing))
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(out, "X_COORDINATES {} double\n{}", g.nx + 1, coords(g.nx, g.origin.x)).unwrap();
        writeln!(out, "Y_COORDINATES {} double\n{}", g.ny + 1, coords(g.ny, g.origin.y)).unwrap();
        writeln!(out, "Z_COORDINATES 1 double\n0").unwrap();
        writeln!(out, "POINT_DATA {}\nSCALARS {name} double 1\nLOOKUP_TABLE default", g.n_nodes()).unwrap();
        for v in self.space.nodal(&self.values) {
            writeln!(out, "{v:.16e}").unwrap();
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}
