//! Nested structured quadrilateral meshes over an axis-aligned rectangle.
//!
//! Three resolutions are tied together: the sampling mesh (cell size `delta`)
//! carries one effective tensor per cell, the macro mesh (`coarse`) refines it
//! and carries the finite-element discretization, and the micro resolution
//! (`micro`) resolves the fine-scale coefficient. Micro grids are only
//! materialized on demand, per patch or for reference solves.

use std::collections::BTreeSet;

use nalgebra::Point2;

use crate::{Error, Result};

pub type Point = Point2<f64>;

/// Relative tolerance for "is this length an integer multiple of that one".
const RATIO_TOL: f64 = 1e-9;
/// Absolute tolerance (relative to the grid spacing) for locating points.
const LOCATE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn new(origin: Point, width: f64, height: f64) -> Self {
        Self {
            min: origin,
            max: Point::new(origin.x + width, origin.y + height),
        }
    }

    pub fn unit() -> Self {
        Self::new(Point::origin(), 1.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.min.x + self.max.x), 0.5 * (self.min.y + self.max.y))
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        p.x >= self.min.x - tol && p.x <= self.max.x + tol && p.y >= self.min.y - tol && p.y <= self.max.y + tol
    }

    pub fn contains_rect(&self, other: &Rect, tol: f64) -> bool {
        self.contains(other.min, tol) && self.contains(other.max, tol)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];
}

/// Boundary marker assignment for one side of the domain.
#[derive(Clone, Debug, PartialEq)]
pub enum SideMarkers {
    Single(String),
    /// Split at an absolute coordinate along the side (`y` for left/right,
    /// `x` for bottom/top). `lower` covers the part below `at`.
    Split { at: f64, lower: String, upper: String },
}

impl SideMarkers {
    fn marker(&self, along: f64) -> &str {
        match self {
            SideMarkers::Single(m) => m,
            SideMarkers::Split { at, lower, upper } => {
                if along < *at {
                    lower
                } else {
                    upper
                }
            }
        }
    }
}

/// The computational domain: a rectangle with named boundary parts.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub rect: Rect,
    /// Indexed like [`Side::ALL`].
    pub markers: [SideMarkers; 4],
}

impl Domain {
    pub const DEFAULT_MARKER: &'static str = "boundary";

    pub fn new(origin: Point, width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
            return Err(Error::Config(format!("domain extent must be positive, got {width} x {height}")));
        }
        let m = || SideMarkers::Single(Self::DEFAULT_MARKER.to_string());
        Ok(Self {
            rect: Rect::new(origin, width, height),
            markers: [m(), m(), m(), m()],
        })
    }

    pub fn unit_square() -> Self {
        Self::new(Point::origin(), 1.0, 1.0).unwrap()
    }

    /// The 1 x 2 channel used for the advection-diffusion problem: `A` right,
    /// `B` top, `E` bottom, and the left side split at mid-height into `D`
    /// (lower) and `C` (upper).
    pub fn channel() -> Self {
        let mut d = Self::new(Point::origin(), 1.0, 2.0).unwrap();
        d.markers = [
            SideMarkers::Single("E".into()),
            SideMarkers::Single("A".into()),
            SideMarkers::Single("B".into()),
            SideMarkers::Split {
                at: 1.0,
                lower: "D".into(),
                upper: "C".into(),
            },
        ];
        d
    }

    pub fn with_markers(mut self, side: Side, markers: SideMarkers) -> Self {
        self.markers[side as usize] = markers;
        self
    }

    pub fn marker_names(&self) -> BTreeSet<&str> {
        self.markers
            .iter()
            .flat_map(|m| match m {
                SideMarkers::Single(a) => vec![a.as_str()],
                SideMarkers::Split { lower, upper, .. } => vec![lower.as_str(), upper.as_str()],
            })
            .collect()
    }

    pub fn has_marker(&self, name: &str) -> bool {
        self.marker_names().contains(name)
    }

    fn tol(&self) -> f64 {
        LOCATE_TOL * self.rect.width().max(self.rect.height())
    }

    /// Sides the point lies on, in [`Side::ALL`] order.
    pub fn sides_of(&self, p: Point) -> Vec<Side> {
        let t = self.tol();
        let r = &self.rect;
        if !r.contains(p, t) {
            return Vec::new();
        }
        let mut out = Vec::new();
        if (p.y - r.min.y).abs() <= t {
            out.push(Side::Bottom);
        }
        if (p.x - r.max.x).abs() <= t {
            out.push(Side::Right);
        }
        if (p.y - r.max.y).abs() <= t {
            out.push(Side::Top);
        }
        if (p.x - r.min.x).abs() <= t {
            out.push(Side::Left);
        }
        out
    }

    /// The marker of a boundary point. Corners resolve to the first side in
    /// [`Side::ALL`] order.
    pub fn marker_at(&self, p: Point) -> Result<&str> {
        let side = *self.sides_of(p).first().ok_or(Error::OutOfDomain {
            x: p.x,
            y: p.y,
            region: "the domain boundary",
        })?;
        let along = match side {
            Side::Bottom | Side::Top => p.x,
            Side::Left | Side::Right => p.y,
        };
        Ok(self.markers[side as usize].marker(along))
    }

    /// Marker of the straight segment `a`-`b` if it lies on the boundary.
    pub fn edge_marker(&self, a: Point, b: Point) -> Option<&str> {
        let sa = self.sides_of(a);
        let sb = self.sides_of(b);
        let side = sa.iter().find(|s| sb.contains(s))?;
        let mid = Point::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
        let along = match side {
            Side::Bottom | Side::Top => mid.x,
            Side::Left | Side::Right => mid.y,
        };
        Some(self.markers[*side as usize].marker(along))
    }
}

/// Uniform grid of square cells. Nodes and cells are numbered x-fastest.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub origin: Point,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub fn new(origin: Point, spacing: f64, nx: usize, ny: usize) -> Self {
        assert!(spacing > 0.0 && nx > 0 && ny > 0, "degenerate grid");
        Self {
            origin,
            spacing,
            nx,
            ny,
        }
    }

    /// Grid of spacing `h` covering `rect`; `h` must divide both sides.
    pub fn covering(rect: &Rect, h: f64) -> Result<Self> {
        let nx = exact_ratio(rect.width(), h, "micro size", "region width")?;
        let ny = exact_ratio(rect.height(), h, "micro size", "region height")?;
        Ok(Self::new(rect.min, h, nx, ny))
    }

    pub fn rect(&self) -> Rect {
        Rect::new(self.origin, self.spacing * self.nx as f64, self.spacing * self.ny as f64)
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        (node % (self.nx + 1), node / (self.nx + 1))
    }

    pub fn node_point(&self, node: usize) -> Point {
        let (i, j) = self.node_ij(node);
        Point::new(
            self.origin.x + i as f64 * self.spacing,
            self.origin.y + j as f64 * self.spacing,
        )
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_ij(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    pub fn cell_rect(&self, cell: usize) -> Rect {
        let (i, j) = self.cell_ij(cell);
        Rect::new(
            Point::new(
                self.origin.x + i as f64 * self.spacing,
                self.origin.y + j as f64 * self.spacing,
            ),
            self.spacing,
            self.spacing,
        )
    }

    /// Local node order: (i,j), (i+1,j), (i,j+1), (i+1,j+1).
    pub fn cell_nodes(&self, cell: usize) -> [usize; 4] {
        let (i, j) = self.cell_ij(cell);
        let n0 = self.node_index(i, j);
        let row = self.nx + 1;
        [n0, n0 + 1, n0 + row, n0 + row + 1]
    }

    fn locate_axis(&self, t: f64, n: usize) -> Option<usize> {
        let tol = LOCATE_TOL;
        if t < -tol || t > n as f64 + tol {
            return None;
        }
        let k = t.round();
        let idx = if (t - k).abs() <= tol {
            // On a grid line: the lower/left neighbour wins.
            (k as usize).saturating_sub(1)
        } else {
            t.floor() as usize
        };
        Some(idx.min(n - 1))
    }

    /// The cell containing `p`; points on shared edges go to the lower-left.
    pub fn locate(&self, p: Point) -> Option<usize> {
        let i = self.locate_axis((p.x - self.origin.x) / self.spacing, self.nx)?;
        let j = self.locate_axis((p.y - self.origin.y) / self.spacing, self.ny)?;
        Some(self.cell_index(i, j))
    }

    /// Boundary edges as node pairs, side by side in [`Side::ALL`] order.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let (nx, ny) = (self.nx, self.ny);
        let mut edges = Vec::with_capacity(2 * (nx + ny));
        for i in 0..nx {
            edges.push((self.node_index(i, 0), self.node_index(i + 1, 0)));
        }
        for j in 0..ny {
            edges.push((self.node_index(nx, j), self.node_index(nx, j + 1)));
        }
        for i in 0..nx {
            edges.push((self.node_index(i, ny), self.node_index(i + 1, ny)));
        }
        for j in 0..ny {
            edges.push((self.node_index(0, j), self.node_index(0, j + 1)));
        }
        edges
    }
}

fn exact_ratio(coarse: f64, fine: f64, what: &'static str, into: &'static str) -> Result<usize> {
    if !(fine > 0.0) || !(coarse > 0.0) {
        return Err(Error::Config(format!("{what} and {into} must be positive")));
    }
    let r = coarse / fine;
    let k = r.round();
    if k < 1.0 || (r - k).abs() > RATIO_TOL * k {
        return Err(Error::Divisibility {
            what,
            into,
            fine,
            coarse,
        });
    }
    Ok(k as usize)
}

/// One sampling cell `K` together with its sampling region `Y_K`, which here
/// coincides with `K`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingRegion {
    pub cell_id: usize,
    pub bbox: Rect,
    pub y_cell: Rect,
}

/// A block of sampling cells around a center cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub center: usize,
    pub depth: usize,
    /// Row-major (ascending cell index).
    pub members: Vec<usize>,
    pub rect: Rect,
}

impl Patch {
    pub fn contains(&self, cell: usize) -> bool {
        self.members.binary_search(&cell).is_ok()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeshHierarchy {
    pub domain: Domain,
    pub delta: f64,
    pub coarse: f64,
    pub micro: f64,
    pub sampling: Grid,
    pub macro_grid: Grid,
}

/// Builds the nested sampling/macro hierarchy; requires `micro | coarse |
/// delta | extent` exactly.
pub fn build_hierarchy(domain: Domain, delta: f64, coarse: f64, micro: f64) -> Result<MeshHierarchy> {
    let rect = domain.rect;
    let sx = exact_ratio(rect.width(), delta, "delta", "domain width")?;
    let sy = exact_ratio(rect.height(), delta, "delta", "domain height")?;
    let m = exact_ratio(delta, coarse, "H", "delta")?;
    exact_ratio(coarse, micro, "h", "H")?;
    for (side, markers) in Side::ALL.iter().zip(&domain.markers) {
        if let SideMarkers::Split { at, .. } = markers {
            let base = match side {
                Side::Bottom | Side::Top => rect.min.x,
                Side::Left | Side::Right => rect.min.y,
            };
            exact_ratio(*at - base, coarse, "H", "marker split offset")?;
        }
    }
    Ok(MeshHierarchy {
        sampling: Grid::new(rect.min, delta, sx, sy),
        macro_grid: Grid::new(rect.min, coarse, sx * m, sy * m),
        domain,
        delta,
        coarse,
        micro,
    })
}

impl MeshHierarchy {
    pub fn sampling_count(&self) -> usize {
        self.sampling.n_cells()
    }

    pub fn macro_count(&self) -> usize {
        self.macro_grid.n_cells()
    }

    /// Macro cells per sampling cell edge.
    pub fn macro_per_sampling(&self) -> usize {
        (self.delta / self.coarse).round() as usize
    }

    /// Micro cells per macro cell edge.
    pub fn micro_per_macro(&self) -> usize {
        (self.coarse / self.micro).round() as usize
    }

    pub fn micro_per_sampling(&self) -> usize {
        self.macro_per_sampling() * self.micro_per_macro()
    }

    fn check_cell(&self, k: usize) -> Result<()> {
        if k >= self.sampling_count() {
            return Err(Error::InvalidCell {
                index: k,
                count: self.sampling_count(),
            });
        }
        Ok(())
    }

    pub fn region(&self, k: usize) -> Result<SamplingRegion> {
        self.check_cell(k)?;
        let bbox = self.sampling.cell_rect(k);
        Ok(SamplingRegion {
            cell_id: k,
            bbox,
            y_cell: bbox,
        })
    }

    pub fn sampling_parent(&self, macro_cell: usize) -> usize {
        let m = self.macro_per_sampling();
        let (i, j) = self.macro_grid.cell_ij(macro_cell);
        self.sampling.cell_index(i / m, j / m)
    }

    pub fn macro_cells_of(&self, k: usize) -> Vec<usize> {
        let m = self.macro_per_sampling();
        let (ki, kj) = self.sampling.cell_ij(k);
        let mut out = Vec::with_capacity(m * m);
        for j in kj * m..(kj + 1) * m {
            for i in ki * m..(ki + 1) * m {
                out.push(self.macro_grid.cell_index(i, j));
            }
        }
        out
    }

    /// Macro nodes of the closure of sampling cell `k`, row-major.
    pub fn macro_nodes_of(&self, k: usize) -> Vec<usize> {
        let m = self.macro_per_sampling();
        let (ki, kj) = self.sampling.cell_ij(k);
        let mut out = Vec::with_capacity((m + 1) * (m + 1));
        for j in kj * m..=(kj + 1) * m {
            for i in ki * m..=(ki + 1) * m {
                out.push(self.macro_grid.node_index(i, j));
            }
        }
        out
    }

    /// All sampling cells within Chebyshev distance `depth` of `k`
    /// (depth 1 is every cell whose closure touches `K`).
    pub fn patch_of(&self, k: usize, depth: usize) -> Result<Patch> {
        self.check_cell(k)?;
        let g = &self.sampling;
        let (ki, kj) = g.cell_ij(k);
        let i0 = ki.saturating_sub(depth);
        let j0 = kj.saturating_sub(depth);
        let i1 = (ki + depth).min(g.nx - 1);
        let j1 = (kj + depth).min(g.ny - 1);
        let mut members = Vec::new();
        for j in j0..=j1 {
            for i in i0..=i1 {
                members.push(g.cell_index(i, j));
            }
        }
        let rect = Rect {
            min: g.cell_rect(g.cell_index(i0, j0)).min,
            max: g.cell_rect(g.cell_index(i1, j1)).max,
        };
        Ok(Patch {
            center: k,
            depth,
            members,
            rect,
        })
    }

    /// `(sampling cell, macro cell)` containing `x`.
    pub fn locate_cell(&self, x: Point) -> Result<(usize, usize)> {
        let out = || Error::OutOfDomain {
            x: x.x,
            y: x.y,
            region: "the domain",
        };
        let t = self.macro_grid.locate(x).ok_or_else(out)?;
        Ok((self.sampling_parent(t), t))
    }

    /// Global grid at the micro resolution.
    pub fn fine_grid(&self) -> Grid {
        let k = self.micro_per_macro();
        Grid::new(self.domain.rect.min, self.micro, self.macro_grid.nx * k, self.macro_grid.ny * k)
    }

    /// Micro grid over a region made of whole sampling cells.
    pub fn micro_grid(&self, rect: &Rect) -> Result<Grid> {
        Grid::covering(rect, self.micro)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(delta: f64, coarse: f64, micro: f64) -> MeshHierarchy {
        build_hierarchy(Domain::unit_square(), delta, coarse, micro).unwrap()
    }

    #[test]
    fn counts_follow_sizes() {
        let m = unit(0.5, 0.25, 0.125);
        assert_eq!(m.sampling_count(), 4);
        assert_eq!(m.macro_count(), 16);
        assert_eq!(unit(0.125, 0.0625, 0.0625).sampling_count(), 64);
    }

    #[test]
    fn non_dividing_sizes_are_rejected() {
        let err = build_hierarchy(Domain::unit_square(), 1.0 / 3.0, 0.25, 0.125).unwrap_err();
        assert!(matches!(err, Error::Divisibility { what: "H", into: "delta", .. }), "{err}");
        assert!(build_hierarchy(Domain::unit_square(), 0.3, 0.1, 0.1).is_err());
        assert!(build_hierarchy(Domain::unit_square(), 0.25, 0.125, 0.05).is_err());
    }

    #[test]
    fn patches_clip_at_the_boundary() {
        let m = unit(0.125, 0.125, 0.125);
        let interior = m.sampling.cell_index(3, 4);
        assert_eq!(m.patch_of(interior, 1).unwrap().members.len(), 9);
        assert_eq!(m.patch_of(0, 1).unwrap().members.len(), 4);
        assert_eq!(m.patch_of(m.sampling.cell_index(0, 3), 1).unwrap().members.len(), 6);
        assert_eq!(m.patch_of(17, 0).unwrap().members, vec![17]);
        assert_eq!(m.patch_of(17, 99).unwrap().members.len(), 64);
        assert!(matches!(m.patch_of(64, 1), Err(Error::InvalidCell { .. })));
    }

    #[test]
    fn patch_membership_is_symmetric() {
        let m = unit(0.125, 0.125, 0.125);
        for k in 0..64 {
            let pk = m.patch_of(k, 1).unwrap();
            for q in 0..64 {
                assert_eq!(pk.contains(q), m.patch_of(q, 1).unwrap().contains(k));
            }
        }
    }

    #[test]
    fn locate_tie_breaks_lower_left() {
        let m = unit(0.5, 0.25, 0.25);
        let (k, t) = m.locate_cell(Point::new(0.125, 0.125)).unwrap();
        assert_eq!((k, t), (0, 0));
        // On the interior vertical edge x = 0.5: the left cell.
        let (k, t) = m.locate_cell(Point::new(0.5, 0.1)).unwrap();
        assert_eq!(k, 0);
        assert_eq!(t, m.macro_grid.cell_index(1, 0));
        let (k, _) = m.locate_cell(Point::new(1.0, 1.0)).unwrap();
        assert_eq!(k, 3);
        assert!(matches!(
            m.locate_cell(Point::new(1.0 + 1e-9, 0.5)),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn sampling_cells_tile_the_domain() {
        let m = build_hierarchy(Domain::channel(), 0.25, 0.125, 0.0625).unwrap();
        let total: f64 = (0..m.sampling_count()).map(|k| m.region(k).unwrap().bbox.area()).sum();
        assert!((total - 2.0).abs() <= 1e-12 * 2.0);
        for t in 0..m.macro_count() {
            let parent = m.region(m.sampling_parent(t)).unwrap().bbox;
            assert!(parent.contains_rect(&m.macro_grid.cell_rect(t), 1e-12));
        }
        assert_eq!(m.sampling_count(), 32);
    }

    #[test]
    fn channel_markers() {
        let d = Domain::channel();
        assert_eq!(d.marker_at(Point::new(0.0, 0.5)).unwrap(), "D");
        assert_eq!(d.marker_at(Point::new(0.0, 1.5)).unwrap(), "C");
        assert_eq!(d.marker_at(Point::new(0.5, 2.0)).unwrap(), "B");
        assert_eq!(d.marker_at(Point::new(1.0, 1.0)).unwrap(), "A");
        assert_eq!(d.marker_at(Point::new(0.3, 0.0)).unwrap(), "E");
        assert_eq!(d.marker_at(Point::new(0.0, 0.0)).unwrap(), "E");
        assert!(d.marker_at(Point::new(0.5, 0.5)).is_err());
        assert_eq!(d.edge_marker(Point::new(0.0, 0.75), Point::new(0.0, 1.0)), Some("D"));
        assert_eq!(d.edge_marker(Point::new(0.0, 1.0), Point::new(0.0, 1.25)), Some("C"));
        assert_eq!(d.edge_marker(Point::new(0.0, 1.0), Point::new(0.25, 1.0)), None);
    }

    proptest::proptest! {
        #[test]
        fn every_boundary_point_has_one_marker(t in 0.0f64..6.0) {
            let d = Domain::channel();
            let p = if t < 1.0 { Point::new(t, 0.0) }
                else if t < 3.0 { Point::new(1.0, t - 1.0) }
                else if t < 4.0 { Point::new(4.0 - t, 2.0) }
                else { Point::new(0.0, 6.0 - t) };
            proptest::prop_assert!(d.marker_at(p).is_ok());
        }
    }
}
