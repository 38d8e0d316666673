//! Fine mesh: cells, oriented interfaces, geometry and boundary classification.

use crate::error::{Error, Result};

pub type Point = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterfaceKind {
    Internal,
    Dirichlet,
    Neumann,
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub barycenter: Point,
    pub volume: f64,
    pub interface_ids: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Interface {
    pub kind: InterfaceKind,
    /// First cell `K` and, for internal interfaces, the second cell `L > K`.
    pub cells: (usize, Option<usize>),
    pub measure: f64,
    pub collocation_point: Point,
    /// Outward unit normal of the first cell.
    pub unit_normal: Point,
    /// Geometric side tag for boundary interfaces (`2 * axis + {0: minus, 1: plus}`).
    pub boundary_tag: Option<usize>,
    /// Prescribed pressure (Dirichlet) or normal flux (Neumann); zero for internal interfaces.
    pub bc_value: f64,
}

impl Interface {
    pub fn is_boundary(&self) -> bool {
        self.cells.1.is_none()
    }
}

/// Lattice bookkeeping for meshes produced by the Cartesian builder.
#[derive(Clone, Debug)]
pub struct Lattice {
    pub n: [usize; 3],
    pub h: [f64; 3],
    /// Lattice index (x fastest) to active cell id.
    pub cell_of: Vec<Option<usize>>,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub dim: usize,
    pub cells: Vec<Cell>,
    pub interfaces: Vec<Interface>,
    pub lattice: Option<Lattice>,
}

impl Mesh {
    /// Assembles a mesh from explicit parts, validating the structural invariants.
    pub fn from_parts(dim: usize, cells: Vec<Cell>, interfaces: Vec<Interface>) -> Result<Self> {
        let mesh = Self { dim, cells, interfaces, lattice: None };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dim == 2 || self.dim == 3) {
            return Err(Error::Mesh(format!("dimension {} not supported", self.dim)));
        }
        if self.cells.is_empty() {
            return Err(Error::Mesh("mesh has no cells".into()));
        }
        for (k, c) in self.cells.iter().enumerate() {
            if !(c.volume > 0.0) {
                return Err(Error::Mesh(format!("cell {k} has volume {}", c.volume)));
            }
            for &i in &c.interface_ids {
                let f = self
                    .interfaces
                    .get(i)
                    .ok_or_else(|| Error::Mesh(format!("cell {k} lists missing interface {i}")))?;
                if f.cells.0 != k && f.cells.1 != Some(k) {
                    return Err(Error::Mesh(format!("cell {k} lists interface {i} not adjacent to it")));
                }
            }
        }
        for (i, f) in self.interfaces.iter().enumerate() {
            let n = f.unit_normal;
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if (len - 1.0).abs() > 1e-14 {
                return Err(Error::Mesh(format!("interface {i} normal has length {len}")));
            }
            if !(f.measure > 0.0) {
                return Err(Error::Mesh(format!("interface {i} has measure {}", f.measure)));
            }
            let (k, l) = f.cells;
            if k >= self.cells.len() || !self.cells[k].interface_ids.contains(&i) {
                return Err(Error::Mesh(format!("interface {i} first cell inconsistent")));
            }
            match l {
                Some(l) => {
                    if l <= k || l >= self.cells.len() || !self.cells[l].interface_ids.contains(&i) {
                        return Err(Error::Mesh(format!("interface {i} second cell inconsistent")));
                    }
                    if f.kind != InterfaceKind::Internal {
                        return Err(Error::Mesh(format!("interface {i} has two cells but is not internal")));
                    }
                }
                None => {
                    if f.kind == InterfaceKind::Internal {
                        return Err(Error::Mesh(format!("boundary interface {i} marked internal")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_interfaces(&self) -> usize {
        self.interfaces.len()
    }

    pub fn cell_volumes(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.volume).collect()
    }

    pub fn interface_measures(&self) -> Vec<f64> {
        self.interfaces.iter().map(|f| f.measure).collect()
    }

    pub fn count_kind(&self, kind: InterfaceKind) -> usize {
        self.interfaces.iter().filter(|f| f.kind == kind).count()
    }

    /// Outward unit normal of `cell` on interface `iface`.
    pub fn outward_normal(&self, cell: usize, iface: usize) -> Point {
        let f = &self.interfaces[iface];
        if f.cells.0 == cell {
            f.unit_normal
        } else {
            let n = f.unit_normal;
            [-n[0], -n[1], -n[2]]
        }
    }

    /// Coordinate `axis` of every cell barycenter.
    pub fn barycenter_coordinate(&self, axis: usize) -> Vec<f64> {
        self.cells.iter().map(|c| c.barycenter[axis]).collect()
    }

    /// Edges `(K, L)` of the cell adjacency through internal interfaces.
    pub fn internal_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.interfaces
            .iter()
            .filter_map(|f| f.cells.1.map(|l| (f.cells.0, l)))
    }
}

/// Builds a 3D axis-aligned mesh with optional inactive cells.
pub fn build_cartesian_mesh(
    nx: usize,
    ny: usize,
    nz: usize,
    hx: f64,
    hy: f64,
    hz: f64,
    active_mask: Option<&[bool]>,
) -> Result<Mesh> {
    build_lattice(3, [nx, ny, nz], [hx, hy, hz], active_mask)
}

/// Builds a 2D axis-aligned mesh (unit thickness) with optional inactive cells.
pub fn build_cartesian_mesh_2d(
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    active_mask: Option<&[bool]>,
) -> Result<Mesh> {
    build_lattice(2, [nx, ny, 1], [hx, hy, 1.0], active_mask)
}

fn build_lattice(dim: usize, n: [usize; 3], h: [f64; 3], mask: Option<&[bool]>) -> Result<Mesh> {
    if n.iter().any(|&v| v == 0) {
        return Err(Error::Mesh(format!("zero lattice dimension {n:?}")));
    }
    if h.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Mesh(format!("non-positive spacing {h:?}")));
    }
    let total = n[0] * n[1] * n[2];
    if let Some(m) = mask {
        if m.len() != total {
            return Err(Error::Mesh(format!("mask has {} entries, expected {total}", m.len())));
        }
    }
    let active = |idx: usize| mask.map_or(true, |m| m[idx]);
    let mut cell_of = vec![None; total];
    let mut cells = Vec::new();
    let measure: f64 = h[..dim].iter().product();
    for idx in 0..total {
        if active(idx) {
            let (i, j, k) = (idx % n[0], (idx / n[0]) % n[1], idx / (n[0] * n[1]));
            let mut c = [(i as f64 + 0.5) * h[0], (j as f64 + 0.5) * h[1], 0.0];
            if dim == 3 {
                c[2] = (k as f64 + 0.5) * h[2];
            }
            cell_of[idx] = Some(cells.len());
            cells.push(Cell { barycenter: c, volume: measure, interface_ids: Vec::new() });
        }
    }
    if cells.is_empty() {
        return Err(Error::Mesh("active mask is fully inactive".into()));
    }
    let stride = [1, n[0], n[0] * n[1]];
    let mut interfaces: Vec<Interface> = Vec::new();
    for idx in 0..total {
        let Some(cell) = cell_of[idx] else { continue };
        let ijk = [idx % n[0], (idx / n[0]) % n[1], idx / (n[0] * n[1])];
        for axis in 0..dim {
            let area = measure / h[axis];
            let xc = cells[cell].barycenter;
            let mut minus_pt = xc;
            minus_pt[axis] -= 0.5 * h[axis];
            let mut plus_pt = xc;
            plus_pt[axis] += 0.5 * h[axis];
            let mut e = [0.0; 3];
            e[axis] = 1.0;
            let neg = [-e[0], -e[1], -e[2]];
            let minus_neighbor = (ijk[axis] > 0).then(|| cell_of[idx - stride[axis]]).flatten();
            match minus_neighbor {
                Some(nb) => interfaces.push(Interface {
                    kind: InterfaceKind::Internal,
                    cells: (nb, Some(cell)),
                    measure: area,
                    collocation_point: minus_pt,
                    unit_normal: e,
                    boundary_tag: None,
                    bc_value: 0.0,
                }),
                None => interfaces.push(boundary_face(cell, area, minus_pt, neg, 2 * axis)),
            }
            let plus_neighbor = (ijk[axis] + 1 < n[axis]).then(|| cell_of[idx + stride[axis]]).flatten();
            if plus_neighbor.is_none() {
                interfaces.push(boundary_face(cell, area, plus_pt, e, 2 * axis + 1));
            }
        }
    }
    for (i, f) in interfaces.iter().enumerate() {
        cells[f.cells.0].interface_ids.push(i);
        if let Some(l) = f.cells.1 {
            cells[l].interface_ids.push(i);
        }
    }
    Ok(Mesh {
        dim,
        cells,
        interfaces,
        lattice: Some(Lattice { n, h, cell_of }),
    })
}

fn boundary_face(cell: usize, area: f64, pt: Point, normal: Point, tag: usize) -> Interface {
    Interface {
        kind: InterfaceKind::Neumann,
        cells: (cell, None),
        measure: area,
        collocation_point: pt,
        unit_normal: normal,
        boundary_tag: Some(tag),
        bc_value: 0.0,
    }
}

/// Geometric selector for boundary interfaces.
#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    /// Collocation point lies on the plane `x[axis] = value`.
    Plane { axis: usize, value: f64 },
    /// Collocation point lies inside the closed box.
    Box { min: Point, max: Point },
    /// Plane restricted to a box.
    PlanePatch { axis: usize, value: f64, min: Point, max: Point },
    /// Boundary side tag as produced by the Cartesian builder.
    Side(usize),
    /// Explicit interface ids.
    Interfaces(Vec<usize>),
    Everywhere,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryValue {
    Constant(f64),
    /// `c0 + gradient · x_ε`.
    Affine { c0: f64, gradient: Point },
}

impl BoundaryValue {
    pub fn at(&self, x: &Point) -> f64 {
        match self {
            BoundaryValue::Constant(v) => *v,
            BoundaryValue::Affine { c0, gradient } => {
                c0 + gradient[0] * x[0] + gradient[1] * x[1] + gradient[2] * x[2]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryCondition {
    Dirichlet(BoundaryValue),
    Neumann(BoundaryValue),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryRule {
    pub region: Region,
    pub condition: BoundaryCondition,
}

/// Ordered rules; the first rule matching an interface wins.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundarySpec {
    pub rules: Vec<BoundaryRule>,
}

impl BoundarySpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dirichlet(mut self, region: Region, value: BoundaryValue) -> Self {
        self.rules.push(BoundaryRule { region, condition: BoundaryCondition::Dirichlet(value) });
        self
    }

    pub fn neumann(mut self, region: Region, value: BoundaryValue) -> Self {
        self.rules.push(BoundaryRule { region, condition: BoundaryCondition::Neumann(value) });
        self
    }
}

fn on_plane(x: &Point, axis: usize, value: f64) -> bool {
    (x[axis] - value).abs() <= 1e-9 * value.abs().max(1.0)
}

fn in_box(x: &Point, min: &Point, max: &Point) -> bool {
    (0..3).all(|a| {
        let tol = 1e-9 * min[a].abs().max(max[a].abs()).max(1.0);
        x[a] >= min[a] - tol && x[a] <= max[a] + tol
    })
}

impl Region {
    fn matches(&self, id: usize, f: &Interface) -> bool {
        let x = &f.collocation_point;
        match self {
            Region::Plane { axis, value } => on_plane(x, *axis, *value),
            Region::Box { min, max } => in_box(x, min, max),
            Region::PlanePatch { axis, value, min, max } => on_plane(x, *axis, *value) && in_box(x, min, max),
            Region::Side(tag) => f.boundary_tag == Some(*tag),
            Region::Interfaces(ids) => ids.contains(&id),
            Region::Everywhere => true,
        }
    }
}

/// Tags every boundary interface as Dirichlet or Neumann; unmatched faces become zero-flux Neumann.
pub fn classify_boundary(mesh: &Mesh, spec: &BoundarySpec) -> Result<Mesh> {
    for rule in &spec.rules {
        if let Region::Interfaces(ids) = &rule.region {
            for &i in ids {
                match mesh.interfaces.get(i) {
                    None => return Err(Error::InvalidArgument(format!("interface {i} does not exist"))),
                    Some(f) if !f.is_boundary() => return Err(Error::BoundaryInternal(i)),
                    _ => {}
                }
            }
        }
    }
    let mut out = mesh.clone();
    for (id, f) in out.interfaces.iter_mut().enumerate() {
        if !f.is_boundary() {
            continue;
        }
        let rule = spec.rules.iter().find(|r| r.region.matches(id, f));
        let (kind, value) = match rule.map(|r| &r.condition) {
            Some(BoundaryCondition::Dirichlet(v)) => (InterfaceKind::Dirichlet, v.at(&f.collocation_point)),
            Some(BoundaryCondition::Neumann(v)) => (InterfaceKind::Neumann, v.at(&f.collocation_point)),
            None => (InterfaceKind::Neumann, 0.0),
        };
        f.kind = kind;
        f.bc_value = value;
    }
    Ok(out)
}
