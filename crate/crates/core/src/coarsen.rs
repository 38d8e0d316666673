//! Multilevel hierarchy by aggregation and local spectral coarsening.

use std::collections::HashMap;
use std::ops::Range;

use faer::Mat;
use rayon::prelude::*;

use crate::dense::{col, from_cols, matvec, sym_eigen, thin_svd, tmatvec, DenseLu};
use crate::error::{Error, Result};
use crate::field_io::PermField;
use crate::mesh::{InterfaceKind, Mesh};
use crate::partition::{fix_coarse_faces, partition, Aggregation, DualGraph, FaceRef, FaceSide};
use crate::sparse::{dot, norm2, CsrMatrix};
use crate::tpfa::HalfTransmissibilities;

/// A face of a level: one or two cells and a contiguous range of flux dofs.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelFace {
    pub cells: (usize, Option<usize>),
    pub tag: usize,
    pub dofs: Range<usize>,
}

/// Cells, faces and dof numbering of one level.
#[derive(Clone, Debug)]
pub struct LevelTopology {
    pub cell_volume: Vec<f64>,
    pub cell_pdofs: Vec<Range<usize>>,
    pub cell_bubbles: Vec<Range<usize>>,
    pub faces: Vec<LevelFace>,
    pub cell_faces: Vec<Vec<usize>>,
    pub n_pdofs: usize,
    pub n_fdofs: usize,
}

impl LevelTopology {
    pub fn n_cells(&self) -> usize {
        self.cell_volume.len()
    }

    /// Flux dofs on the closure of a cell: its faces' dofs followed by its bubbles.
    pub fn local_flux_dofs(&self, cell: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.cell_faces[cell].iter().flat_map(|&f| self.faces[f].dofs.clone()).collect();
        v.extend(self.cell_bubbles[cell].clone());
        v
    }

    pub fn dual_graph(&self) -> DualGraph {
        DualGraph::from_pairs(self.n_cells(), self.faces.iter().filter_map(|f| f.cells.1.map(|l| (f.cells.0, l))))
    }

    pub fn face_refs(&self) -> Vec<(usize, FaceRef)> {
        self.faces.iter().enumerate().map(|(i, f)| (i, FaceRef { cells: f.cells, tag: f.tag })).collect()
    }
}

/// One level of the hierarchy: topology, divergence, static local blocks and projector data.
#[derive(Clone, Debug)]
pub struct Level {
    pub topo: LevelTopology,
    /// Divergence (pressure dofs × flux dofs).
    pub d: CsrMatrix,
    /// Global flux dofs of each cell's local space (the `W_σσ` map).
    pub local_dofs: Vec<Vec<usize>>,
    /// Pressure-independent local mass blocks over `local_dofs`.
    pub static_blocks: Vec<Mat<f64>>,
    /// Row of the piecewise-constant projector per cell, over the cell's pressure dofs.
    pub pwc_weights: Vec<Vec<f64>>,
    /// Coefficients of the constant fine pressure on this level.
    pub ones: Vec<f64>,
    /// Level cell containing each fine cell.
    pub fine_to_cell: Vec<usize>,
}

impl Level {
    pub fn n_cells(&self) -> usize {
        self.topo.n_cells()
    }

    pub fn n_pdofs(&self) -> usize {
        self.topo.n_pdofs
    }

    pub fn n_fdofs(&self) -> usize {
        self.topo.n_fdofs
    }

    /// `Σ_K s_K W_Kᵀ M_K W_K`.
    pub fn assemble_m(&self, cell_scale: &[f64]) -> CsrMatrix {
        assert_eq!(cell_scale.len(), self.n_cells());
        let mut t = Vec::new();
        for (k, dofs) in self.local_dofs.iter().enumerate() {
            let b = &self.static_blocks[k];
            for (i, &gi) in dofs.iter().enumerate() {
                for (j, &gj) in dofs.iter().enumerate() {
                    let v = b[(i, j)];
                    if v != 0.0 {
                        t.push((gi, gj, cell_scale[k] * v));
                    }
                }
            }
        }
        CsrMatrix::from_triplets(self.n_fdofs(), self.n_fdofs(), &t)
    }

    /// `M σ` from the local blocks without assembling.
    pub fn apply_m(&self, cell_scale: &[f64], sigma: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_fdofs()];
        for (k, dofs) in self.local_dofs.iter().enumerate() {
            let b = &self.static_blocks[k];
            let s = cell_scale[k];
            for (i, &gi) in dofs.iter().enumerate() {
                let mut acc = 0.0;
                for (j, &gj) in dofs.iter().enumerate() {
                    acc += b[(i, j)] * sigma[gj];
                }
                y[gi] += s * acc;
            }
        }
        y
    }

    /// `Π̃ p`: one value per cell.
    pub fn pwc(&self, p: &[f64]) -> Vec<f64> {
        assert_eq!(p.len(), self.n_pdofs());
        self.topo
            .cell_pdofs
            .iter()
            .zip(&self.pwc_weights)
            .map(|(r, w)| r.clone().zip(w).map(|(i, wi)| wi * p[i]).sum())
            .collect()
    }

    /// `Π̃` as a sparse matrix (cells × pressure dofs).
    pub fn pwc_matrix(&self) -> CsrMatrix {
        let mut t = Vec::new();
        for (k, (r, w)) in self.topo.cell_pdofs.iter().zip(&self.pwc_weights).enumerate() {
            for (i, wi) in r.clone().zip(w) {
                t.push((k, i, *wi));
            }
        }
        CsrMatrix::from_triplets(self.n_cells(), self.n_pdofs(), &t)
    }

    /// Volume-weighted average of a fine cell field over each cell of this level.
    pub fn average_fine_field(&self, fine_volume: &[f64], field: &[f64]) -> Vec<f64> {
        let mut sum = vec![0.0; self.n_cells()];
        let mut vol = vec![0.0; self.n_cells()];
        for (i, &c) in self.fine_to_cell.iter().enumerate() {
            sum[c] += fine_volume[i] * field[i];
            vol[c] += fine_volume[i];
        }
        sum.iter().zip(&vol).map(|(s, v)| s / v).collect()
    }
}

/// Transfer operators between level `ℓ` and `ℓ+1`.
#[derive(Clone, Debug)]
pub struct LevelSpaces {
    pub aggregation: Aggregation,
    /// Fine pressure dofs × coarse pressure dofs, orthonormal columns per aggregate.
    pub p_p: CsrMatrix,
    pub p_sigma: CsrMatrix,
    pub q_sigma: CsrMatrix,
    /// Coarse pressure dofs that hold the constant (PV) mode of each aggregate.
    pub pv_dofs: Vec<usize>,
}

impl LevelSpaces {
    pub fn q_p(&self) -> CsrMatrix {
        self.p_p.transpose()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyParams {
    pub levels: usize,
    /// Target aggregate size per coarsening step; the last entry repeats.
    pub factors: Vec<f64>,
    pub m_a: usize,
    pub m_f: usize,
    pub seed: u64,
}

impl HierarchyParams {
    pub fn factor(&self, step: usize) -> f64 {
        self.factors.get(step).or(self.factors.last()).copied().unwrap_or(8.0)
    }
}

#[derive(Clone, Debug)]
pub struct Hierarchy {
    pub levels: Vec<Level>,
    pub spaces: Vec<LevelSpaces>,
    pub params: HierarchyParams,
    /// Mesh interface of each level-0 flux dof (Neumann interfaces carry no dof).
    pub fine_flux_ids: Vec<usize>,
}

impl Hierarchy {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Text summary: per level cells, flux dofs, average aggregate size, nonzeros.
    pub fn stats(&self) -> String {
        let mut s = String::from("level cells pdofs fdofs avg_aggregate nnz_D nnz_M\n");
        for (l, lev) in self.levels.iter().enumerate() {
            let avg = if l == 0 {
                1.0
            } else {
                self.levels[l - 1].n_cells() as f64 / lev.n_cells() as f64
            };
            let nnz_m = lev.assemble_m(&vec![1.0; lev.n_cells()]).nnz();
            s.push_str(&format!(
                "{l} {} {} {} {avg:.2} {} {nnz_m}\n",
                lev.n_cells(),
                lev.n_pdofs(),
                lev.n_fdofs(),
                lev.d.nnz()
            ));
        }
        s
    }
}

/// Level 0 straight from the mesh: one pressure dof per cell, one flux dof per non-Neumann interface.
pub fn fine_level(mesh: &Mesh, perm: &PermField) -> Result<(Level, Vec<usize>)> {
    let trans = HalfTransmissibilities::compute(mesh, perm)?;
    let flux_ids: Vec<usize> = (0..mesh.n_interfaces())
        .filter(|&i| mesh.interfaces[i].kind != InterfaceKind::Neumann)
        .collect();
    let mut dof_of = vec![usize::MAX; mesh.n_interfaces()];
    for (d, &i) in flux_ids.iter().enumerate() {
        dof_of[i] = d;
    }
    let faces: Vec<LevelFace> = flux_ids
        .iter()
        .enumerate()
        .map(|(d, &i)| {
            let f = &mesh.interfaces[i];
            LevelFace { cells: f.cells, tag: f.boundary_tag.unwrap_or(0), dofs: d..d + 1 }
        })
        .collect();
    let n = mesh.n_cells();
    let mut cell_faces = vec![Vec::new(); n];
    let mut static_blocks = Vec::with_capacity(n);
    let mut local_dofs = Vec::with_capacity(n);
    let mut t = Vec::new();
    for (k, cell) in mesh.cells.iter().enumerate() {
        let mut diag = Vec::new();
        for &i in &cell.interface_ids {
            let d = dof_of[i];
            if d == usize::MAX {
                continue;
            }
            cell_faces[k].push(d);
            let f = &mesh.interfaces[i];
            let side = usize::from(f.cells.0 != k);
            diag.push(1.0 / trans.values[i][side]);
            t.push((k, d, if side == 0 { -1.0 } else { 1.0 }));
        }
        local_dofs.push(cell_faces[k].clone());
        static_blocks.push(Mat::from_fn(diag.len(), diag.len(), |a, b| if a == b { diag[a] } else { 0.0 }));
    }
    let topo = LevelTopology {
        cell_volume: mesh.cell_volumes(),
        cell_pdofs: (0..n).map(|k| k..k + 1).collect(),
        cell_bubbles: vec![0..0; n],
        faces,
        cell_faces,
        n_pdofs: n,
        n_fdofs: flux_ids.len(),
    };
    let d = CsrMatrix::from_triplets(n, flux_ids.len(), &t);
    let level = Level {
        topo,
        d,
        local_dofs,
        static_blocks,
        pwc_weights: vec![vec![1.0]; n],
        ones: vec![1.0; n],
        fine_to_cell: (0..n).collect(),
    };
    Ok((level, flux_ids))
}

/// Builds the full hierarchy; the setup operator is `M` at κ ≡ 1.
pub fn build_hierarchy(mesh: &Mesh, perm: &PermField, params: &HierarchyParams) -> Result<Hierarchy> {
    if params.levels < 1 {
        return Err(Error::InvalidArgument("hierarchy needs at least one level".into()));
    }
    if params.m_a == 0 || params.m_f == 0 {
        return Err(Error::InvalidArgument("m_A and m_f must be positive".into()));
    }
    let (level0, fine_flux_ids) = fine_level(mesh, perm)?;
    let mut levels = vec![level0];
    let mut spaces = Vec::new();
    for step in 0..params.levels.saturating_sub(1) {
        let fine = levels.last().unwrap();
        let factor = params.factor(step);
        if !(factor > 0.0) {
            return Err(Error::InvalidArgument(format!("coarsening factor {factor}")));
        }
        let target = ((fine.n_cells() as f64 / factor).ceil() as usize).clamp(1, fine.n_cells());
        let graph = fine.topo.dual_graph();
        let agg = partition(&graph, target, params.seed.wrapping_add(step as u64))?;
        let (coarse, space) = coarsen_level(fine, agg, params.m_a, params.m_f)?;
        if coarse.n_cells() >= fine.n_cells() && fine.n_cells() > 1 {
            log::warn!("level {} did not shrink ({} cells)", step + 1, coarse.n_cells());
        }
        levels.push(coarse);
        spaces.push(space);
    }
    Ok(Hierarchy { levels, spaces, params: params.clone(), fine_flux_ids })
}

/// Local saddle problem `[M Dᵀ; D 0][σ; p] = [a; b]`, optionally pinned by a pressure kernel.
struct LocalSaddle {
    m_lu: DenseLu,
    d: Mat<f64>,
    minv_dt: Mat<f64>,
    bordered: DenseLu,
    n_p: usize,
}

impl LocalSaddle {
    fn new(m: Mat<f64>, d: Mat<f64>, kernel: Option<&[f64]>) -> Result<Self> {
        let n_p = d.nrows();
        let m_lu = DenseLu::new(&m)?;
        let minv_dt = if d.ncols() == 0 { Mat::zeros(0, n_p) } else { m_lu.solve_mat(&d.transpose().to_owned()) };
        let l = if d.ncols() == 0 { Mat::zeros(n_p, n_p) } else { &d * &minv_dt };
        let nb = n_p + usize::from(kernel.is_some());
        let bmat = Mat::from_fn(nb, nb, |i, j| {
            if i < n_p && j < n_p {
                l[(i, j)]
            } else if let Some(k) = kernel {
                if i < n_p {
                    k[i]
                } else if j < n_p {
                    k[j]
                } else {
                    0.0
                }
            } else {
                0.0
            }
        });
        let bordered = DenseLu::new(&bmat)?;
        Ok(Self { m_lu, d, minv_dt, bordered, n_p })
    }

    fn solve(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let minv_a = self.m_lu.solve(a);
        let d_minv_a = if minv_a.is_empty() { vec![0.0; self.n_p] } else { matvec(&self.d, &minv_a) };
        let mut rhs: Vec<f64> = d_minv_a.iter().zip(b).map(|(x, y)| x - y).collect();
        rhs.resize(self.bordered.dim(), 0.0);
        let mut p = self.bordered.solve(&rhs);
        p.truncate(self.n_p);
        let corr = matvec(&self.minv_dt, &p);
        let sigma = minv_a.iter().zip(&corr).map(|(x, y)| x - y).collect();
        (sigma, p)
    }
}

/// Per-aggregate index sets on the fine level.
struct AggregateSets {
    members: Vec<usize>,
    pdofs: Vec<usize>,
    interior: Vec<usize>,
    ones: Vec<f64>,
}

fn aggregate_sets(fine: &Level, agg: &Aggregation) -> Vec<AggregateSets> {
    let topo = &fine.topo;
    let labels = &agg.vertex_to_aggregate;
    let mut sets: Vec<AggregateSets> = agg
        .members()
        .into_iter()
        .map(|members| {
            let pdofs: Vec<usize> = members.iter().flat_map(|&k| topo.cell_pdofs[k].clone()).collect();
            let ones = pdofs.iter().map(|&i| fine.ones[i]).collect();
            AggregateSets { members, pdofs, interior: Vec::new(), ones }
        })
        .collect();
    for f in &topo.faces {
        if let Some(l) = f.cells.1 {
            let a = labels[f.cells.0];
            if a == labels[l] {
                sets[a].interior.extend(f.dofs.clone());
            }
        }
    }
    for (a, s) in sets.iter_mut().enumerate() {
        for &k in &s.members {
            debug_assert_eq!(labels[k], a);
            s.interior.extend(topo.cell_bubbles[k].clone());
        }
    }
    sets
}

/// Dense restriction of the reference operator to cells `cells` and flux dofs `fdofs`.
fn local_blocks(fine: &Level, m_ref: &CsrMatrix, pdofs: &[usize], fdofs: &[usize]) -> (Mat<f64>, Mat<f64>) {
    (m_ref.dense_block(fdofs, fdofs), fine.d.dense_block(pdofs, fdofs))
}

/// Result of the local spectral problem on one aggregate.
struct PressureBasis {
    /// Orthonormal columns over the aggregate pdofs; column 0 is the PV vector.
    basis: Mat<f64>,
    /// Flux dofs of the extended neighbourhood and `(M|_N)⁻¹ D|_Nᵀ` applied to each basis column.
    nbr_fdofs: Vec<usize>,
    nbr_traces: Mat<f64>,
}

/// Spectral pressure basis for one aggregate from the extended neighbourhood operator.
pub fn local_eigenbasis(
    fine: &Level,
    m_ref: &CsrMatrix,
    agg: &Aggregation,
    graph: &DualGraph,
    aggregate: usize,
    m_a: usize,
) -> Result<Mat<f64>> {
    let sets = aggregate_sets(fine, agg);
    Ok(pressure_basis(fine, m_ref, agg, graph, &sets[aggregate], m_a)?.basis)
}

fn pressure_basis(
    fine: &Level,
    m_ref: &CsrMatrix,
    agg: &Aggregation,
    graph: &DualGraph,
    set: &AggregateSets,
    m_a: usize,
) -> Result<PressureBasis> {
    let topo = &fine.topo;
    let n_a = set.pdofs.len();
    let a_id = agg.vertex_to_aggregate[set.members[0]];
    // Extended neighbourhood: the aggregate plus every adjacent cell.
    let mut in_nbr = HashMap::new();
    let mut nbr_cells = set.members.clone();
    for &k in &set.members {
        in_nbr.insert(k, ());
    }
    for &k in &set.members {
        for &w in graph.neighbors(k) {
            if in_nbr.insert(w, ()).is_none() {
                nbr_cells.push(w);
            }
        }
    }
    // Aggregate pdofs come first so restriction to the aggregate is a leading block.
    let nbr_pdofs: Vec<usize> = nbr_cells.iter().flat_map(|&k| topo.cell_pdofs[k].clone()).collect();
    let mut nbr_fdofs = Vec::new();
    let mut seen_face = HashMap::new();
    for &k in &nbr_cells {
        for &f in &topo.cell_faces[k] {
            let face = &topo.faces[f];
            if let Some(l) = face.cells.1 {
                let other = if face.cells.0 == k { l } else { face.cells.0 };
                if in_nbr.contains_key(&other) && seen_face.insert(f, ()).is_none() {
                    nbr_fdofs.extend(face.dofs.clone());
                }
            }
        }
        nbr_fdofs.extend(topo.cell_bubbles[k].clone());
    }
    let (m_n, d_n) = local_blocks(fine, m_ref, &nbr_pdofs, &nbr_fdofs);
    let m_lu = DenseLu::new(&m_n)?;
    let minv_dt = if nbr_fdofs.is_empty() {
        Mat::zeros(0, nbr_pdofs.len())
    } else {
        m_lu.solve_mat(&d_n.transpose().to_owned())
    };
    let lap = if nbr_fdofs.is_empty() { Mat::zeros(nbr_pdofs.len(), nbr_pdofs.len()) } else { &d_n * &minv_dt };

    let norm1 = norm2(&set.ones);
    let pv: Vec<f64> = set.ones.iter().map(|v| v / norm1).collect();
    let mut cols = vec![pv.clone()];
    let want = m_a.min(n_a);
    if m_a > n_a {
        log::warn!("aggregate {a_id}: m_A = {m_a} exceeds its {n_a} pressure dofs; truncating");
    }
    if want > 1 {
        let (_, vecs) = sym_eigen(&lap)?;
        let k = m_a.min(nbr_pdofs.len());
        // Restrict the smallest eigenvectors to the aggregate, remove the PV direction.
        let restricted: Vec<Vec<f64>> = (0..k).map(|j| (0..n_a).map(|i| vecs[(i, j)]).collect()).collect();
        let raw = from_cols(n_a, &restricted);
        let (_, s_raw, _) = thin_svd(&raw)?;
        let tol = 1e-8 * s_raw.first().copied().unwrap_or(0.0);
        let projected: Vec<Vec<f64>> = restricted
            .iter()
            .map(|v| {
                let c = dot(v, &pv);
                v.iter().zip(&pv).map(|(x, q)| x - c * q).collect()
            })
            .collect();
        let (u, s, _) = thin_svd(&from_cols(n_a, &projected))?;
        for (j, &sj) in s.iter().enumerate() {
            if cols.len() >= want || sj <= tol {
                break;
            }
            cols.push(col(&u, j));
        }
    }
    let basis = from_cols(n_a, &cols);
    // Trace data: (M|_N)⁻¹ D|_Nᵀ q for each basis column extended by zero.
    let ext = Mat::from_fn(nbr_pdofs.len(), basis.ncols(), |i, j| if i < n_a { basis[(i, j)] } else { 0.0 });
    let nbr_traces = if nbr_fdofs.is_empty() { Mat::zeros(0, basis.ncols()) } else { &minv_dt * &ext };
    Ok(PressureBasis { basis, nbr_fdofs, nbr_traces })
}

/// Flux basis of one coarse face: vectors over the face's fine dofs, PV first.
struct FaceBasis {
    fdofs: Vec<usize>,
    vectors: Vec<Vec<f64>>,
    /// `z = D|_{A,F}ᵀ 1|_A` for the first aggregate.
    z: Vec<f64>,
}

/// Coarsens one level given an aggregation of its cells.
pub fn coarsen_level(fine: &Level, agg: Aggregation, m_a: usize, m_f: usize) -> Result<(Level, LevelSpaces)> {
    let topo = &fine.topo;
    let graph = topo.dual_graph();
    let agg = fix_coarse_faces(&topo.face_refs(), &graph, &agg);
    let n_agg = agg.aggregate_count;
    let labels = &agg.vertex_to_aggregate;
    let m_ref = fine.assemble_m(&vec![1.0; fine.n_cells()]);
    let sets = aggregate_sets(fine, &agg);

    let bases: Vec<PressureBasis> = sets
        .par_iter()
        .map(|s| pressure_basis(fine, &m_ref, &agg, &graph, s, m_a))
        .collect::<Result<_>>()?;

    // Interior solvers per aggregate (pure Neumann, pinned by the constant mode).
    let interior: Vec<LocalSaddle> = sets
        .par_iter()
        .map(|s| {
            let (m, d) = local_blocks(fine, &m_ref, &s.pdofs, &s.interior);
            LocalSaddle::new(m, d, Some(&s.ones))
        })
        .collect::<Result<_>>()?;

    // Face bases.
    let face_bases: Vec<FaceBasis> = agg
        .coarse_faces
        .par_iter()
        .map(|cf| {
            let fdofs: Vec<usize> = cf.fine_edge_ids.iter().flat_map(|&f| topo.faces[f].dofs.clone()).collect();
            let a = cf.aggregates.0;
            let sa = &sets[a];
            let d_af = fine.d.dense_block(&sa.pdofs, &fdofs);
            let z = tmatvec(&d_af, &sa.ones);
            let pv = match cf.aggregates.1 {
                FaceSide::Aggregate(b) => {
                    let sb = &sets[b];
                    let mut pdofs = sa.pdofs.clone();
                    pdofs.extend(&sb.pdofs);
                    let mut fl = sa.interior.clone();
                    fl.extend(&sb.interior);
                    // Every face between the two aggregates belongs to the union problem.
                    for f in &topo.faces {
                        if let Some(l) = f.cells.1 {
                            let (x, y) = (labels[f.cells.0], labels[l]);
                            if (x == a && y == b) || (x == b && y == a) {
                                fl.extend(f.dofs.clone());
                            }
                        }
                    }
                    let (m, d) = local_blocks(fine, &m_ref, &pdofs, &fl);
                    let mut kernel = sa.ones.clone();
                    kernel.extend(&sb.ones);
                    let na2 = dot(&sa.ones, &sa.ones);
                    let nb2 = dot(&sb.ones, &sb.ones);
                    let mut rhs: Vec<f64> = sa.ones.iter().map(|v| -v / na2).collect();
                    rhs.extend(sb.ones.iter().map(|v| v / nb2));
                    let solver = LocalSaddle::new(m, d, Some(&kernel))?;
                    let (sigma, _) = solver.solve(&vec![0.0; fl.len()], &rhs);
                    restrict(&fl, &sigma, &fdofs)
                }
                FaceSide::Boundary(_) => {
                    let mut fl = sa.interior.clone();
                    fl.extend(&fdofs);
                    let (m, d) = local_blocks(fine, &m_ref, &sa.pdofs, &fl);
                    let na2 = dot(&sa.ones, &sa.ones);
                    let rhs: Vec<f64> = sa.ones.iter().map(|v| -v / na2).collect();
                    let solver = LocalSaddle::new(m, d, None)?;
                    let (sigma, _) = solver.solve(&vec![0.0; fl.len()], &rhs);
                    restrict(&fl, &sigma, &fdofs)
                }
            };
            let zpv = dot(&z, &pv);
            if !(zpv.abs() > 1e-12 * norm2(&z) * norm2(&pv)) {
                return Err(Error::Singular(format!(
                    "PV flux of coarse face {:?} carries no net flux",
                    cf.aggregates
                )));
            }
            let mut vectors = vec![pv.clone()];
            let extra_wanted = m_f.saturating_sub(1).min(fdofs.len().saturating_sub(1));
            if m_f > fdofs.len() {
                log::debug!("coarse face {:?} has {} dofs < m_f = {m_f}", cf.aggregates, fdofs.len());
            }
            if extra_wanted > 0 {
                if let FaceSide::Aggregate(b) = cf.aggregates.1 {
                    let mut traces = Vec::new();
                    for side in [a, b] {
                        let pb = &bases[side];
                        let pos: HashMap<usize, usize> =
                            pb.nbr_fdofs.iter().enumerate().map(|(i, &d)| (d, i)).collect();
                        for j in 0..pb.nbr_traces.ncols() {
                            let t: Vec<f64> = fdofs
                                .iter()
                                .map(|d| pos.get(d).map_or(0.0, |&i| pb.nbr_traces[(i, j)]))
                                .collect();
                            traces.push(t);
                        }
                    }
                    let raw = from_cols(fdofs.len(), &traces);
                    let (_, s_raw, _) = thin_svd(&raw)?;
                    let tol = 1e-8 * s_raw.first().copied().unwrap_or(0.0);
                    let projected: Vec<Vec<f64>> = traces
                        .iter()
                        .map(|t| {
                            let c = dot(&z, t) / zpv;
                            t.iter().zip(&pv).map(|(x, q)| x - c * q).collect()
                        })
                        .collect();
                    let (u, s, _) = thin_svd(&from_cols(fdofs.len(), &projected))?;
                    for (j, &sj) in s.iter().enumerate() {
                        if vectors.len() > extra_wanted || sj <= tol {
                            break;
                        }
                        // Re-impose zᵀt = 0 exactly; SVD mixing keeps it only to roundoff.
                        let mut t = col(&u, j);
                        let c = dot(&z, &t) / zpv;
                        t.iter_mut().zip(&pv).for_each(|(x, q)| *x -= c * q);
                        vectors.push(t);
                    }
                }
            }
            Ok(FaceBasis { fdofs, vectors, z })
        })
        .collect::<Result<_>>()?;

    // Coarse dof numbering: face dofs in face order, then bubbles per aggregate.
    let mut face_ranges = Vec::with_capacity(face_bases.len());
    let mut next = 0;
    for fb in &face_bases {
        face_ranges.push(next..next + fb.vectors.len());
        next += fb.vectors.len();
    }
    let mut bubble_ranges = Vec::with_capacity(n_agg);
    for b in &bases {
        let nb = b.basis.ncols() - 1;
        bubble_ranges.push(next..next + nb);
        next += nb;
    }
    let n_cf = next;
    let mut pdof_ranges = Vec::with_capacity(n_agg);
    let mut np = 0;
    for b in &bases {
        pdof_ranges.push(np..np + b.basis.ncols());
        np += b.basis.ncols();
    }

    // P_p.
    let mut tp = Vec::new();
    for (a, b) in bases.iter().enumerate() {
        for (i, &row) in sets[a].pdofs.iter().enumerate() {
            for j in 0..b.basis.ncols() {
                let v = b.basis[(i, j)];
                if v != 0.0 {
                    tp.push((row, pdof_ranges[a].start + j, v));
                }
            }
        }
    }
    let p_p = CsrMatrix::from_triplets(fine.n_pdofs(), np, &tp);

    // Extensions of every face vector into its aggregates, and bubbles.
    let extension_cols: Vec<Vec<(usize, usize, f64)>> = agg
        .coarse_faces
        .par_iter()
        .zip(face_bases.par_iter())
        .zip(face_ranges.par_iter())
        .map(|((cf, fb), range)| {
            let mut t = Vec::new();
            let sides: Vec<usize> = match cf.aggregates.1 {
                FaceSide::Aggregate(b) => vec![cf.aggregates.0, b],
                FaceSide::Boundary(_) => vec![cf.aggregates.0],
            };
            for (j, v) in fb.vectors.iter().enumerate() {
                let c_dof = range.start + j;
                for (i, &d) in fb.fdofs.iter().enumerate() {
                    t.push((d, c_dof, v[i]));
                }
                for &s in &sides {
                    let set = &sets[s];
                    let pv: Vec<f64> = bases[s].basis.col(0).iter().copied().collect();
                    let d_af = fine.d.dense_block(&set.pdofs, &fb.fdofs);
                    let m_if = m_ref.dense_block(&set.interior, &fb.fdofs);
                    let dt = matvec(&d_af, v);
                    let c = dot(&pv, &dt);
                    let a_rhs: Vec<f64> = matvec(&m_if, v).iter().map(|x| -x).collect();
                    let b_rhs: Vec<f64> = pv.iter().zip(&dt).map(|(q, x)| c * q - x).collect();
                    let (sig, _) = interior[s].solve(&a_rhs, &b_rhs);
                    for (i, &d) in set.interior.iter().enumerate() {
                        t.push((d, c_dof, sig[i]));
                    }
                }
            }
            t
        })
        .collect();
    let bubble_cols: Vec<Vec<(usize, usize, f64)>> = (0..n_agg)
        .into_par_iter()
        .map(|a| {
            let mut t = Vec::new();
            let basis = &bases[a].basis;
            for j in 1..basis.ncols() {
                let q = col(basis, j);
                let (sig, _) = interior[a].solve(&vec![0.0; sets[a].interior.len()], &q);
                for (i, &d) in sets[a].interior.iter().enumerate() {
                    t.push((d, bubble_ranges[a].start + j - 1, sig[i]));
                }
            }
            t
        })
        .collect();
    let mut ts: Vec<(usize, usize, f64)> = extension_cols.into_iter().flatten().collect();
    ts.extend(bubble_cols.into_iter().flatten());
    ts.retain(|e| e.2 != 0.0);
    let p_sigma = CsrMatrix::from_triplets(fine.n_fdofs(), n_cf, &ts);

    // Q_σ: face functionals on face dofs, bubble rows from the divergence.
    let mut tq = Vec::new();
    for (fb, range) in face_bases.iter().zip(&face_ranges) {
        let pv = &fb.vectors[0];
        let zpv = dot(&fb.z, pv);
        for (i, &d) in fb.fdofs.iter().enumerate() {
            tq.push((range.start, d, fb.z[i] / zpv));
        }
        for (j, t) in fb.vectors.iter().enumerate().skip(1) {
            // tᵀ (I − σ^PV zᵀ / zᵀσ^PV)
            let tp = dot(t, pv) / zpv;
            for (i, &d) in fb.fdofs.iter().enumerate() {
                tq.push((range.start + j, d, t[i] - tp * fb.z[i]));
            }
        }
    }
    for a in 0..n_agg {
        let basis = &bases[a].basis;
        for j in 1..basis.ncols() {
            let row = bubble_ranges[a].start + j - 1;
            let mut acc: HashMap<usize, f64> = HashMap::new();
            for (i, &pd) in sets[a].pdofs.iter().enumerate() {
                let w = basis[(i, j)];
                for (c, v) in fine.d.row(pd) {
                    *acc.entry(c).or_insert(0.0) += w * v;
                }
            }
            let mut entries: Vec<_> = acc.into_iter().collect();
            entries.sort_unstable_by_key(|e| e.0);
            tq.extend(entries.into_iter().filter(|e| e.1 != 0.0).map(|(c, v)| (row, c, v)));
        }
    }
    let q_sigma = CsrMatrix::from_triplets(n_cf, fine.n_fdofs(), &tq);

    // Coarse divergence, variationally.
    let d_raw = p_p.transpose().matmul(&fine.d).matmul(&p_sigma);
    let d_c = d_raw.pruned(1e-14 * d_raw.max_abs());

    // Coarse topology.
    let faces: Vec<LevelFace> = agg
        .coarse_faces
        .iter()
        .zip(&face_ranges)
        .zip(&face_bases)
        .map(|((cf, r), _)| {
            let (cells, tag) = match cf.aggregates.1 {
                FaceSide::Aggregate(b) => ((cf.aggregates.0, Some(b)), 0),
                FaceSide::Boundary(tag) => ((cf.aggregates.0, None), tag),
            };
            LevelFace { cells, tag, dofs: r.clone() }
        })
        .collect();
    let mut cell_faces = vec![Vec::new(); n_agg];
    for (i, f) in faces.iter().enumerate() {
        cell_faces[f.cells.0].push(i);
        if let Some(b) = f.cells.1 {
            cell_faces[b].push(i);
        }
    }
    let cell_volume: Vec<f64> = sets
        .iter()
        .map(|s| s.members.iter().map(|&k| topo.cell_volume[k]).sum())
        .collect();
    let coarse_topo = LevelTopology {
        cell_volume,
        cell_pdofs: pdof_ranges.clone(),
        cell_bubbles: bubble_ranges,
        faces,
        cell_faces,
        n_pdofs: np,
        n_fdofs: n_cf,
    };

    // Static blocks: Galerkin projection of the children's blocks.
    let local_dofs: Vec<Vec<usize>> = (0..n_agg).map(|a| coarse_topo.local_flux_dofs(a)).collect();
    let static_blocks: Vec<Mat<f64>> = (0..n_agg)
        .into_par_iter()
        .map(|a| {
            let mut closure: Vec<usize> = Vec::new();
            let mut pos = HashMap::new();
            for &k in &sets[a].members {
                for &d in &fine.local_dofs[k] {
                    if !pos.contains_key(&d) {
                        pos.insert(d, closure.len());
                        closure.push(d);
                    }
                }
            }
            let mut mt = Mat::<f64>::zeros(closure.len(), closure.len());
            for &k in &sets[a].members {
                let dofs = &fine.local_dofs[k];
                let b = &fine.static_blocks[k];
                for (i, di) in dofs.iter().enumerate() {
                    for (j, dj) in dofs.iter().enumerate() {
                        mt[(pos[di], pos[dj])] += b[(i, j)];
                    }
                }
            }
            let pa = p_sigma.dense_block(&closure, &local_dofs[a]);
            let blk = pa.transpose() * &mt * &pa;
            let n = blk.nrows();
            Mat::from_fn(n, n, |i, j| 0.5 * (blk[(i, j)] + blk[(j, i)]))
        })
        .collect();

    // Piecewise-constant projector rows and the constant vector.
    let pwc_weights: Vec<Vec<f64>> = (0..n_agg)
        .map(|a| {
            let basis = &bases[a].basis;
            let vol: f64 = coarse_topo.cell_volume[a];
            let mut w = vec![0.0; basis.ncols()];
            let mut row = 0;
            for &k in &sets[a].members {
                let vk = topo.cell_volume[k];
                for (i, wk) in fine.pwc_weights[k].iter().enumerate() {
                    for (j, wj) in w.iter_mut().enumerate() {
                        *wj += vk * wk * basis[(row + i, j)] / vol;
                    }
                }
                row += fine.pwc_weights[k].len();
            }
            w
        })
        .collect();
    let ones = p_p.tmatvec(&fine.ones);
    let fine_to_cell = fine.fine_to_cell.iter().map(|&c| labels[c]).collect();
    let pv_dofs = pdof_ranges.iter().map(|r| r.start).collect();

    let level = Level {
        topo: coarse_topo,
        d: d_c,
        local_dofs,
        static_blocks,
        pwc_weights,
        ones,
        fine_to_cell,
    };
    Ok((level, LevelSpaces { aggregation: agg, p_p, p_sigma, q_sigma, pv_dofs }))
}

fn restrict(from: &[usize], values: &[f64], to: &[usize]) -> Vec<f64> {
    let pos: HashMap<usize, usize> = from.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    to.iter().map(|d| values[pos[d]]).collect()
}
