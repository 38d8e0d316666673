//! Dual graphs and connected aggregation of cells.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::{InterfaceKind, Mesh};

/// Undirected cell graph; `edges` are sorted, unique `(K, L)` pairs with `K < L`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualGraph {
    pub vertex_count: usize,
    pub edges: Vec<(usize, usize)>,
    pub weights: Option<Vec<f64>>,
    adjacency: Vec<Vec<usize>>,
}

impl DualGraph {
    /// Builds a graph from arbitrary pairs; self-loops are dropped and parallel edges merged.
    pub fn from_pairs(vertex_count: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut edges: Vec<(usize, usize)> = pairs
            .into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        let mut adjacency = vec![Vec::new(); vertex_count];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for a in adjacency.iter_mut() {
            a.sort_unstable();
        }
        Self { vertex_count, edges, weights: None, adjacency }
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    /// Connected components as a vertex labelling plus the component count.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut label = vec![usize::MAX; self.vertex_count];
        let mut count = 0;
        for s in 0..self.vertex_count {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = count;
            let mut stack = vec![s];
            while let Some(v) = stack.pop() {
                for &w in &self.adjacency[v] {
                    if label[w] == usize::MAX {
                        label[w] = count;
                        stack.push(w);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }
}

/// One vertex per cell, one edge per internal interface.
pub fn build_dual_graph(mesh: &Mesh) -> DualGraph {
    DualGraph::from_pairs(mesh.n_cells(), mesh.internal_pairs())
}

/// Other side of a coarse face.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FaceSide {
    Aggregate(usize),
    Boundary(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoarseFace {
    /// First aggregate and the other side; for internal faces the first aggregate is the smaller id.
    pub aggregates: (usize, FaceSide),
    pub fine_edge_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregation {
    pub vertex_to_aggregate: Vec<usize>,
    pub aggregate_count: usize,
    pub coarse_faces: Vec<CoarseFace>,
}

impl Aggregation {
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let count = labels.iter().max().map_or(0, |m| m + 1);
        Self { vertex_to_aggregate: labels, aggregate_count: count, coarse_faces: Vec::new() }
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.aggregate_count];
        for (v, &a) in self.vertex_to_aggregate.iter().enumerate() {
            m[a].push(v);
        }
        m
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.aggregate_count];
        for &a in &self.vertex_to_aggregate {
            s[a] += 1;
        }
        s
    }
}

/// Partitions `graph` into about `target_parts` connected aggregates; deterministic per seed.
pub fn partition(graph: &DualGraph, target_parts: usize, seed: u64) -> Result<Aggregation> {
    let n = graph.vertex_count;
    if target_parts == 0 || target_parts > n {
        return Err(Error::InvalidArgument(format!("target_parts {target_parts} for {n} vertices")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (comp, ncomp) = graph.components();
    if ncomp > 1 {
        log::warn!("partitioning a disconnected graph with {ncomp} components");
    }
    let mut comp_members = vec![Vec::new(); ncomp];
    for v in 0..n {
        comp_members[comp[v]].push(v);
    }
    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    for members in &comp_members {
        let parts = ((target_parts as f64 * members.len() as f64 / n as f64).round() as usize).clamp(1, members.len());
        let size = members.len() as f64 / parts as f64;
        next = grow_component(graph, members, size, &mut labels, next, &mut rng);
    }
    let target_size = n as f64 / target_parts as f64;
    merge_small(graph, &mut labels, (target_size / 3.0).floor() as usize);
    refine(graph, &mut labels, target_size);
    repair_connectivity(graph, &mut labels);
    Ok(Aggregation::from_labels(renumber(&labels)))
}

fn grow_component(
    graph: &DualGraph,
    members: &[usize],
    size: f64,
    labels: &mut [usize],
    mut next: usize,
    rng: &mut ChaCha8Rng,
) -> usize {
    let start = members[rng.gen_range(0..members.len())];
    let far = bfs_order(graph, start).last().copied().unwrap_or(start);
    let order = bfs_order(graph, far);
    let mut rank = vec![usize::MAX; graph.vertex_count];
    for (i, &v) in order.iter().enumerate() {
        rank[v] = i;
    }
    let total = members.len();
    let mut assigned = 0usize;
    let mut parts_made = 0usize;
    let mut gain = vec![0usize; graph.vertex_count];
    let mut dist = vec![usize::MAX; graph.vertex_count];
    while assigned < total {
        // Seed: unassigned vertex most attached to assigned ones, earliest in BFS order.
        let seed = order
            .iter()
            .copied()
            .filter(|&v| labels[v] == usize::MAX)
            .max_by_key(|&v| {
                let attached = graph.neighbors(v).iter().filter(|&&w| labels[w] != usize::MAX).count();
                (attached, std::cmp::Reverse(rank[v]))
            })
            .unwrap();
        parts_made += 1;
        let goal = ((size * parts_made as f64).round() as usize).saturating_sub(assigned).max(1);
        let label = next;
        next += 1;
        let mut frontier: Vec<usize> = Vec::new();
        let mut touched: Vec<usize> = Vec::new();
        let add = |v: usize, d: usize, labels: &mut [usize], frontier: &mut Vec<usize>, gain: &mut [usize], dist: &mut [usize], touched: &mut Vec<usize>| {
            labels[v] = label;
            for &w in graph.neighbors(v) {
                if labels[w] == usize::MAX {
                    if gain[w] == 0 {
                        frontier.push(w);
                        touched.push(w);
                        dist[w] = d + 1;
                    }
                    gain[w] += 1;
                    dist[w] = dist[w].min(d + 1);
                }
            }
        };
        add(seed, 0, labels, &mut frontier, &mut gain, &mut dist, &mut touched);
        let mut count = 1;
        while count < goal {
            frontier.retain(|&w| labels[w] == usize::MAX);
            let Some((pos, _)) = frontier
                .iter()
                .enumerate()
                .max_by_key(|(_, &w)| (gain[w], std::cmp::Reverse(dist[w]), std::cmp::Reverse(rank[w])))
            else {
                break;
            };
            let v = frontier.swap_remove(pos);
            let d = dist[v];
            add(v, d, labels, &mut frontier, &mut gain, &mut dist, &mut touched);
            count += 1;
        }
        for w in touched {
            gain[w] = 0;
            dist[w] = usize::MAX;
        }
        assigned += count;
    }
    next
}

fn bfs_order(graph: &DualGraph, start: usize) -> Vec<usize> {
    let mut seen = vec![false; graph.vertex_count];
    let mut order = vec![start];
    seen[start] = true;
    let mut q = VecDeque::from([start]);
    while let Some(v) = q.pop_front() {
        for &w in graph.neighbors(v) {
            if !seen[w] {
                seen[w] = true;
                order.push(w);
                q.push_back(w);
            }
        }
    }
    order
}

fn sizes_of(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut s = BTreeMap::new();
    for &l in labels {
        *s.entry(l).or_insert(0) += 1;
    }
    s
}

/// Neighbouring aggregate sharing the most edges with `verts`.
fn best_neighbor(graph: &DualGraph, labels: &[usize], verts: &[usize], own: usize) -> Option<usize> {
    let mut links: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in verts {
        for &w in graph.neighbors(v) {
            if labels[w] != own {
                *links.entry(labels[w]).or_insert(0) += 1;
            }
        }
    }
    links.into_iter().max_by_key(|&(l, c)| (c, std::cmp::Reverse(l))).map(|(l, _)| l)
}

fn members_of(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (v, &l) in labels.iter().enumerate() {
        m.entry(l).or_default().push(v);
    }
    m
}

fn merge_small(graph: &DualGraph, labels: &mut [usize], min_size: usize) {
    if min_size == 0 {
        return;
    }
    let mut stuck = std::collections::BTreeSet::new();
    loop {
        let members = members_of(labels);
        let small = members
            .iter()
            .filter(|(l, vs)| vs.len() < min_size && !stuck.contains(*l))
            .min_by_key(|(l, vs)| (vs.len(), **l))
            .map(|(&l, vs)| (l, vs.clone()));
        let Some((l, verts)) = small else { break };
        match best_neighbor(graph, labels, &verts, l) {
            Some(target) => verts.iter().for_each(|&v| labels[v] = target),
            None => {
                stuck.insert(l);
            }
        }
    }
}

/// Whether aggregate `label` (of `size` vertices) stays connected once `removed` leaves it.
fn connected_without(graph: &DualGraph, labels: &[usize], label: usize, size: usize, removed: usize) -> bool {
    let Some(&start) = graph.neighbors(removed).iter().find(|&&w| labels[w] == label) else {
        return size == 1;
    };
    let mut seen = std::collections::HashSet::from([start]);
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        for &w in graph.neighbors(v) {
            if w != removed && labels[w] == label && seen.insert(w) {
                stack.push(w);
            }
        }
    }
    seen.len() == size - 1
}

/// Boundary smoothing: move vertices to the neighbouring aggregate they are more attached to.
fn refine(graph: &DualGraph, labels: &mut [usize], target_size: f64) {
    let min_size = (0.6 * target_size).floor().max(1.0) as usize;
    let max_size = (1.4 * target_size).ceil() as usize;
    for _ in 0..6 {
        let mut sizes = sizes_of(labels);
        let mut moved = 0;
        for v in 0..labels.len() {
            let own = labels[v];
            let mut links: BTreeMap<usize, usize> = BTreeMap::new();
            for &w in graph.neighbors(v) {
                *links.entry(labels[w]).or_insert(0) += 1;
            }
            let inside = links.get(&own).copied().unwrap_or(0);
            let best = links
                .iter()
                .filter(|(&l, _)| l != own)
                .max_by_key(|&(&l, &c)| (c, std::cmp::Reverse(l)))
                .map(|(&l, &c)| (l, c));
            let Some((target, c)) = best else { continue };
            if c <= inside || sizes[&own] <= min_size || sizes[&target] >= max_size {
                continue;
            }
            if !connected_without(graph, labels, own, sizes[&own], v) {
                continue;
            }
            labels[v] = target;
            *sizes.get_mut(&own).unwrap() -= 1;
            *sizes.get_mut(&target).unwrap() += 1;
            moved += 1;
        }
        if moved == 0 {
            break;
        }
    }
}

/// Keeps the largest component of every aggregate and hands stranded pieces to neighbours.
fn repair_connectivity(graph: &DualGraph, labels: &mut [usize]) {
    loop {
        let mut changed = false;
        for (l, verts) in members_of(labels) {
            let pieces = pieces_of(graph, labels, &verts, l);
            if pieces.len() <= 1 {
                continue;
            }
            let largest = pieces.iter().enumerate().max_by_key(|(i, p)| (p.len(), std::cmp::Reverse(*i))).unwrap().0;
            for (i, piece) in pieces.iter().enumerate() {
                if i == largest {
                    continue;
                }
                if let Some(target) = best_neighbor(graph, labels, piece, l) {
                    piece.iter().for_each(|&v| labels[v] = target);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

fn pieces_of(graph: &DualGraph, labels: &[usize], verts: &[usize], label: usize) -> Vec<Vec<usize>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for &s in verts {
        if !seen.insert(s) {
            continue;
        }
        let mut piece = vec![s];
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &w in graph.neighbors(v) {
                if labels[w] == label && seen.insert(w) {
                    piece.push(w);
                    stack.push(w);
                }
            }
        }
        piece.sort_unstable();
        out.push(piece);
    }
    out
}

fn renumber(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let k = map.len();
            *map.entry(l).or_insert(k)
        })
        .collect()
}

/// Face of a level used when grouping faces into coarse faces.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceRef {
    pub cells: (usize, Option<usize>),
    pub tag: usize,
}

/// Faces of the fine mesh that carry unknowns (Neumann faces excluded).
pub fn mesh_face_refs(mesh: &Mesh) -> Vec<(usize, FaceRef)> {
    mesh.interfaces
        .iter()
        .enumerate()
        .filter(|(_, f)| f.kind != InterfaceKind::Neumann)
        .map(|(i, f)| (i, FaceRef { cells: f.cells, tag: f.boundary_tag.unwrap_or(0) }))
        .collect()
}

/// Groups faces joining distinct aggregates (or an aggregate and a boundary tag) and splits
/// every group into connected components.
///
/// Two faces of a group are adjacent when they share a cell, or when their cells on each
/// side coincide or are neighbours in `graph`.
pub fn fix_coarse_faces(
    faces: &[(usize, FaceRef)],
    graph: &DualGraph,
    aggregation: &Aggregation,
) -> Aggregation {
    let agg = &aggregation.vertex_to_aggregate;
    let mut groups: BTreeMap<(usize, FaceSide), Vec<(usize, FaceRef)>> = BTreeMap::new();
    for &(id, f) in faces {
        let a = agg[f.cells.0];
        match f.cells.1 {
            Some(l) => {
                let b = agg[l];
                if a == b {
                    continue;
                }
                let key = (a.min(b), FaceSide::Aggregate(a.max(b)));
                let oriented = if a < b { f } else { FaceRef { cells: (l, Some(f.cells.0)), tag: f.tag } };
                groups.entry(key).or_default().push((id, oriented));
            }
            None => groups.entry((a, FaceSide::Boundary(f.tag))).or_default().push((id, f)),
        }
    }
    let near = |x: usize, y: usize| x == y || graph.are_adjacent(x, y);
    let mut coarse_faces = Vec::new();
    for (key, members) in groups {
        let m = members.len();
        let mut parent: Vec<usize> = (0..m).collect();
        fn find(p: &mut [usize], i: usize) -> usize {
            let mut r = i;
            while p[r] != r {
                r = p[r];
            }
            let mut j = i;
            while p[j] != r {
                let n = p[j];
                p[j] = r;
                j = n;
            }
            r
        }
        for i in 0..m {
            for j in i + 1..m {
                let (fi, fj) = (members[i].1, members[j].1);
                let share = fi.cells.0 == fj.cells.0 || (fi.cells.1.is_some() && fi.cells.1 == fj.cells.1);
                let side_a = near(fi.cells.0, fj.cells.0);
                let side_b = match (fi.cells.1, fj.cells.1) {
                    (Some(x), Some(y)) => near(x, y),
                    _ => true,
                };
                if share || (side_a && side_b) {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
        let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..m {
            let r = find(&mut parent, i);
            comps.entry(r).or_default().push(members[i].0);
        }
        for (_, mut ids) in comps {
            ids.sort_unstable();
            coarse_faces.push(CoarseFace { aggregates: key, fine_edge_ids: ids });
        }
    }
    Aggregation {
        vertex_to_aggregate: aggregation.vertex_to_aggregate.clone(),
        aggregate_count: aggregation.aggregate_count,
        coarse_faces,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_cartesian_mesh_2d;

    fn grid(nx: usize, ny: usize) -> DualGraph {
        build_dual_graph(&build_cartesian_mesh_2d(nx, ny, 1.0, 1.0, None).unwrap())
    }

    fn assert_connected(g: &DualGraph, a: &Aggregation) {
        for (l, verts) in a.members().iter().enumerate() {
            assert!(!verts.is_empty());
            assert_eq!(pieces_of(g, &a.vertex_to_aggregate, verts, l).len(), 1, "aggregate {l} disconnected");
        }
    }

    #[test]
    fn graph_counts() {
        let g = grid(2, 1);
        assert_eq!((g.vertex_count, g.edges.len()), (2, 1));
        let g = grid(3, 3);
        assert_eq!((g.vertex_count, g.edges.len()), (9, 12));
    }

    #[test]
    fn parallel_edges_merge() {
        let g = DualGraph::from_pairs(2, [(0, 1), (1, 0), (0, 1)]);
        assert_eq!(g.edges, vec![(0, 1)]);
    }

    #[test]
    fn trivial_targets() {
        let g = grid(5, 4);
        let one = partition(&g, 1, 0).unwrap();
        assert_eq!(one.aggregate_count, 1);
        let all = partition(&g, 20, 0).unwrap();
        assert_eq!(all.aggregate_count, 20);
        assert!(all.sizes().iter().all(|&s| s == 1));
        assert!(partition(&g, 0, 0).is_err());
        assert!(partition(&g, 21, 0).is_err());
    }

    #[test]
    fn eight_by_eight_into_four() {
        let g = grid(8, 8);
        let a = partition(&g, 4, 1).unwrap();
        assert_eq!(a.aggregate_count, 4);
        assert_connected(&g, &a);
        for s in a.sizes() {
            assert!((10..=22).contains(&s), "size {s}");
        }
    }

    #[test]
    fn disconnected_input_partitions_each_component() {
        let g = DualGraph::from_pairs(6, [(0, 1), (1, 2), (3, 4), (4, 5)]);
        let a = partition(&g, 2, 0).unwrap();
        assert_eq!(a.aggregate_count, 2);
        assert_connected(&g, &a);
    }

    #[test]
    fn split_halves_faces_are_connected() {
        let mesh = build_cartesian_mesh_2d(4, 4, 1.0, 1.0, None).unwrap();
        let g = build_dual_graph(&mesh);
        let labels = (0..16).map(|v| usize::from(v % 4 >= 2)).collect();
        let agg = Aggregation::from_labels(labels);
        let fixed = fix_coarse_faces(&mesh_face_refs(&mesh), &g, &agg);
        assert_eq!(fixed.coarse_faces.len(), 1);
        assert_eq!(fixed.coarse_faces[0].fine_edge_ids.len(), 4);
        assert_eq!(fixed.vertex_to_aggregate, agg.vertex_to_aggregate);
    }

    #[test]
    fn separated_shared_face_is_split() {
        // 5×3 grid: B is the bottom row, A the top row plus both ends of the middle row,
        // C the middle of the middle row. A and B touch only at x = 0 and x = 4.
        let mesh = build_cartesian_mesh_2d(5, 3, 1.0, 1.0, None).unwrap();
        let g = build_dual_graph(&mesh);
        let labels: Vec<usize> = (0..15)
            .map(|v| match (v % 5, v / 5) {
                (_, 0) => 1,
                (_, 2) | (0, 1) | (4, 1) => 0,
                _ => 2,
            })
            .collect();
        let agg = Aggregation::from_labels(labels);
        let fixed = fix_coarse_faces(&mesh_face_refs(&mesh), &g, &agg);
        let ab: Vec<_> = fixed
            .coarse_faces
            .iter()
            .filter(|f| f.aggregates == (0, FaceSide::Aggregate(1)))
            .collect();
        assert_eq!(ab.len(), 2);
        assert!(ab.iter().all(|f| f.fine_edge_ids.len() == 1));
    }

    #[test]
    fn boundary_faces_grouped_per_tag() {
        use crate::mesh::{classify_boundary, BoundarySpec, BoundaryValue, Region};
        let mesh = build_cartesian_mesh_2d(4, 2, 1.0, 1.0, None).unwrap();
        let spec = BoundarySpec::new()
            .dirichlet(Region::Plane { axis: 1, value: 0.0 }, BoundaryValue::Constant(0.0))
            .dirichlet(Region::Plane { axis: 0, value: 0.0 }, BoundaryValue::Constant(0.0));
        let mesh = classify_boundary(&mesh, &spec).unwrap();
        let g = build_dual_graph(&mesh);
        let agg = Aggregation::from_labels(vec![0; 8]);
        let fixed = fix_coarse_faces(&mesh_face_refs(&mesh), &g, &agg);
        let sides: Vec<_> = fixed.coarse_faces.iter().map(|f| (f.aggregates, f.fine_edge_ids.len())).collect();
        assert_eq!(sides, vec![((0, FaceSide::Boundary(0)), 2), ((0, FaceSide::Boundary(2)), 4)]);
    }

    #[test]
    fn deterministic_per_seed() {
        let g = grid(20, 12);
        let a = partition(&g, 10, 42).unwrap();
        let b = partition(&g, 10, 42).unwrap();
        assert_eq!(a, b);
    }
}
