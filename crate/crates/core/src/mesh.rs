//! Hexahedral meshes, boundary locators and facet sets.
//!
//! Cells use the VTK hexahedron vertex ordering: nodes 0–3 form the bottom
//! face counter-clockwise seen from above, nodes 4–7 the top face in the
//! same order.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::elements::{map_element, ReferenceElement};
use crate::error::{FemError, Result};

/// Default absolute coordinate tolerance used by locators.
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Local node indices of the six faces, ordered so the right-hand normal
/// points out of the cell.
pub const HEX8_FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1], // z-
    [4, 5, 6, 7], // z+
    [0, 1, 5, 4], // y-
    [1, 2, 6, 5], // x+
    [2, 3, 7, 6], // y+
    [3, 0, 4, 7], // x-
];

#[derive(Clone, Debug)]
pub struct Mesh {
    nodes: Vec<[f64; 3]>,
    cells: Vec<[usize; 8]>,
}

impl Mesh {
    /// Build a mesh, checking index bounds, that every node is used and that
    /// no cell is inverted at any quadrature point.
    pub fn new(nodes: Vec<[f64; 3]>, cells: Vec<[usize; 8]>) -> Result<Self> {
        if cells.is_empty() {
            return Err(FemError::InvalidArgument("mesh has no cells".into()));
        }
        let mut used = vec![false; nodes.len()];
        for (c, cell) in cells.iter().enumerate() {
            for &n in cell {
                if n >= nodes.len() {
                    return Err(FemError::InvalidArgument(format!(
                        "cell {c} references node {n} but the mesh has {} nodes",
                        nodes.len()
                    )));
                }
                used[n] = true;
            }
        }
        if let Some(n) = used.iter().position(|u| !u) {
            return Err(FemError::InvalidArgument(format!(
                "node {n} is not referenced by any cell"
            )));
        }
        let mesh = Self { nodes, cells };
        let reference = ReferenceElement::new();
        for c in 0..mesh.num_cells() {
            map_element(&reference, &mesh.cell_coords(c)).map_err(|e| match e {
                FemError::InvertedElement { quad, det, .. } => {
                    FemError::InvertedElement { cell: c, quad, det }
                }
                other => other,
            })?;
        }
        Ok(mesh)
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    pub fn cells(&self) -> &[[usize; 8]] {
        &self.cells
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn dim(&self) -> usize {
        3
    }

    pub fn cell_coords(&self, c: usize) -> [[f64; 3]; 8] {
        self.cells[c].map(|n| self.nodes[n])
    }

    pub fn centroid(&self, c: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        for n in self.cells[c] {
            for d in 0..3 {
                x[d] += self.nodes[n][d] / 8.0;
            }
        }
        x
    }

    /// Mean edge length over all cell edges, used as the default length
    /// scale for filters.
    pub fn mean_edge_length(&self) -> f64 {
        const EDGES: [(usize, usize); 12] = [
            (0, 1),
            (1, 2),
            (2, 3),
            (3, 0),
            (4, 5),
            (5, 6),
            (6, 7),
            (7, 4),
            (0, 4),
            (1, 5),
            (2, 6),
            (3, 7),
        ];
        let mut total = 0.0;
        for c in 0..self.num_cells() {
            let x = self.cell_coords(c);
            for (a, b) in EDGES {
                total += dist(&x[a], &x[b]);
            }
        }
        total / (12 * self.num_cells()) as f64
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.nodes {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }
}

pub(crate) fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

type Predicate = dyn Fn(&[f64; 3], f64) -> bool + Send + Sync;

/// Geometric node selector. The predicate receives the coordinate and the
/// locator tolerance.
#[derive(Clone)]
pub struct BoundaryLocator {
    predicate: Arc<Predicate>,
    tol: f64,
}

impl fmt::Debug for BoundaryLocator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryLocator")
            .field("tol", &self.tol)
            .finish_non_exhaustive()
    }
}

impl BoundaryLocator {
    pub fn new<F>(predicate: F) -> Self
    where
        F: Fn(&[f64; 3], f64) -> bool + Send + Sync + 'static,
    {
        Self {
            predicate: Arc::new(predicate),
            tol: DEFAULT_TOLERANCE,
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    /// Nodes with `x[axis] ≈ value`.
    pub fn plane(axis: usize, value: f64) -> Self {
        assert!(axis < 3, "axis out of range");
        Self::new(move |x, tol| (x[axis] - value).abs() <= tol)
    }

    /// Nodes with `lo - tol <= x[axis] <= hi + tol`.
    pub fn slab(axis: usize, lo: f64, hi: f64) -> Self {
        assert!(axis < 3, "axis out of range");
        Self::new(move |x, tol| x[axis] >= lo - tol && x[axis] <= hi + tol)
    }

    /// Nodes on any face of the box `[lo, hi]`.
    pub fn box_boundary(lo: [f64; 3], hi: [f64; 3]) -> Self {
        Self::new(move |x, tol| {
            (0..3).any(|d| (x[d] - lo[d]).abs() <= tol || (x[d] - hi[d]).abs() <= tol)
        })
    }

    pub fn everywhere() -> Self {
        Self::new(|_, _| true)
    }

    pub fn nowhere() -> Self {
        Self::new(|_, _| false)
    }

    /// Both predicates hold (tolerance of `self` is kept).
    pub fn and(self, other: BoundaryLocator) -> Self {
        let (a, b) = (self.predicate, other.predicate);
        let tol_b = other.tol;
        Self {
            predicate: Arc::new(move |x, tol| a(x, tol) && b(x, tol_b)),
            tol: self.tol,
        }
    }

    pub fn not(self) -> Self {
        let a = self.predicate;
        Self {
            predicate: Arc::new(move |x, tol| !a(x, tol)),
            tol: self.tol,
        }
    }

    pub fn contains(&self, x: &[f64; 3]) -> bool {
        (self.predicate)(x, self.tol)
    }
}

/// Boundary faces as `(cell, local face)` pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FacetSet {
    pub facets: Vec<(usize, usize)>,
}

impl FacetSet {
    pub fn len(&self) -> usize {
        self.facets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facets.is_empty()
    }
}

/// Structured box mesh of `nx × ny × nz` cells on `[0,lx]×[0,ly]×[0,lz]`.
/// Node `(i, j, k)` has index `i + (nx+1)(j + (ny+1)k)`.
pub fn generate_box_mesh(
    nx: usize,
    ny: usize,
    nz: usize,
    lx: f64,
    ly: f64,
    lz: f64,
) -> Result<Mesh> {
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(FemError::InvalidArgument(format!(
            "cell counts must be at least 1, got ({nx}, {ny}, {nz})"
        )));
    }
    if !(lx > 0.0 && ly > 0.0 && lz > 0.0) || !(lx.is_finite() && ly.is_finite() && lz.is_finite())
    {
        return Err(FemError::InvalidArgument(format!(
            "box lengths must be positive and finite, got ({lx}, {ly}, {lz})"
        )));
    }
    let (sx, sy) = (nx + 1, ny + 1);
    let id = |i: usize, j: usize, k: usize| i + sx * (j + sy * k);
    let mut nodes = Vec::with_capacity(sx * sy * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push([
                    i as f64 * lx / nx as f64,
                    j as f64 * ly / ny as f64,
                    k as f64 * lz / nz as f64,
                ]);
            }
        }
    }
    let mut cells = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                cells.push([
                    id(i, j, k),
                    id(i + 1, j, k),
                    id(i + 1, j + 1, k),
                    id(i, j + 1, k),
                    id(i, j, k + 1),
                    id(i + 1, j, k + 1),
                    id(i + 1, j + 1, k + 1),
                    id(i, j + 1, k + 1),
                ]);
            }
        }
    }
    // Structured cells are never inverted, so skip the quadrature check.
    Ok(Mesh { nodes, cells })
}

/// Indices of nodes satisfying the locator, ascending.
pub fn locate_nodes(mesh: &Mesh, locator: &BoundaryLocator) -> Vec<usize> {
    mesh.nodes()
        .iter()
        .enumerate()
        .filter(|(_, x)| locator.contains(x))
        .map(|(i, _)| i)
        .collect()
}

/// Boundary faces whose four nodes all satisfy the locator.
pub fn boundary_facets(mesh: &Mesh, locator: &BoundaryLocator) -> FacetSet {
    let mut count: HashMap<[usize; 4], u32> = HashMap::new();
    for cell in mesh.cells() {
        for face in HEX8_FACES {
            *count.entry(face_key(cell, &face)).or_insert(0) += 1;
        }
    }
    let mut facets = Vec::new();
    for (c, cell) in mesh.cells().iter().enumerate() {
        for (f, face) in HEX8_FACES.iter().enumerate() {
            if count[&face_key(cell, face)] != 1 {
                continue;
            }
            if face
                .iter()
                .all(|&l| locator.contains(&mesh.nodes()[cell[l]]))
            {
                facets.push((c, f));
            }
        }
    }
    FacetSet { facets }
}

fn face_key(cell: &[usize; 8], face: &[usize; 4]) -> [usize; 4] {
    let mut k = face.map(|l| cell[l]);
    k.sort_unstable();
    k
}

/// Read a Gmsh ASCII v2.2 mesh containing 8-node hexahedra.
pub fn import_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let text = std::fs::read_to_string(path)?;
    crate::io::gmsh::parse_msh(&text)
}
