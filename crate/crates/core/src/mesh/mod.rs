//! Indexed triangle meshes with tombstoned deletion.
//!
//! A [`SurfaceMesh`] owns vertex records and triangles. Deleted entities are
//! tombstoned in place so indices stay stable while the surface is being
//! edited; compaction happens only when a snapshot is exported, which keeps
//! the per-vertex parent bookkeeping valid between snapshots.
//!
//! Invariant outside of surgery transactions: the live triangles form a
//! closed, consistently oriented 2-manifold. Every undirected edge has
//! exactly two incident triangles and every vertex link is a single cycle.

use nalgebra::Vector3;
use std::collections::HashMap;
use thiserror::Error;

pub mod io;
pub mod primitives;

pub type VertexId = u32;
pub type TriId = u32;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("mesh has no triangles")]
    Empty,
    #[error("triangle {tri} references vertex {vertex}, but there are only {count} vertices")]
    IndexOutOfRange { tri: u32, vertex: u32, count: usize },
    #[error("boundary edge ({a}, {b}): only one incident triangle")]
    BoundaryEdge { a: u32, b: u32 },
    #[error("non-manifold edge ({a}, {b}): {count} incident triangles")]
    NonManifoldEdge { a: u32, b: u32, count: usize },
    #[error("mesh is not orientable")]
    NonOrientable,
    #[error("vertex {vertex}: {source}")]
    BadVertex {
        vertex: u32,
        #[source]
        source: RingError,
    },
}

/// One orderable fan of a vertex link: a simple cycle of neighbors together
/// with the triangle realizing each cycle edge.
#[derive(Debug, Clone)]
pub struct RingCycle {
    pub neighbors: Vec<VertexId>,
    pub tris: Vec<TriId>,
}

#[derive(Debug, Error)]
pub enum RingError {
    #[error("isolated or low-valence vertex (valence {valence})")]
    LowValence { valence: usize },
    #[error("link is not a single cycle ({n} orderable subsets)", n = cycles.len())]
    TopologyFault { cycles: Vec<RingCycle> },
}

/// Ordered one-ring of a vertex. Neighbors run counter-clockwise viewed from
/// outside and start at the smallest neighbor index; `rel[j]` is the position
/// of `neighbors[j]` relative to the center.
#[derive(Debug, Clone)]
pub struct OneRing {
    pub center: VertexId,
    pub neighbors: Vec<VertexId>,
    pub rel: Vec<Vector3<f64>>,
}

impl OneRing {
    pub fn valence(&self) -> usize {
        self.neighbors.len()
    }
}

#[derive(Debug, Clone)]
pub struct VertexRecord {
    pub position: Vector3<f64>,
    /// Unit outward normal from the last cache refresh.
    pub normal_cache: Vector3<f64>,
    /// Mean curvature from the last cache refresh.
    pub curvature_cache: f64,
    /// Absolute clock time at which the cached values stop being trusted.
    /// Starts at -inf so every vertex is refreshed before its first move.
    pub expiry_time: f64,
    /// Shortest adjacent edge / |kappa| at the last refresh; the minimum over
    /// vertices bounds the step size for accuracy.
    pub accuracy_dt: f64,
    /// Index of this vertex in the previous snapshot's compact numbering.
    pub parent_id: u32,
    pub alive: bool,
}

impl VertexRecord {
    fn new(position: Vector3<f64>, parent_id: u32) -> Self {
        VertexRecord {
            position,
            normal_cache: Vector3::zeros(),
            curvature_cache: 0.0,
            expiry_time: f64::NEG_INFINITY,
            accuracy_dt: f64::INFINITY,
            parent_id,
            alive: true,
        }
    }
}

/// Compacted copy of the live part of a mesh, produced at snapshot export.
#[derive(Debug, Clone)]
pub struct CompactMesh {
    pub positions: Vec<Vector3<f64>>,
    pub tris: Vec<[u32; 3]>,
    /// Per compact vertex: its parent's index in the previous snapshot.
    pub parents: Vec<u32>,
    /// Old vertex id -> compact index, `u32::MAX` for dead slots.
    pub vertex_map: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    verts: Vec<VertexRecord>,
    tris: Vec<[u32; 3]>,
    tri_alive: Vec<bool>,
    /// Per vertex: sorted ids of incident live triangles.
    vert_tris: Vec<Vec<TriId>>,
    live_verts: usize,
    live_tris: usize,
}

impl SurfaceMesh {
    /// Builds a mesh from indexed triangles, repairing orientation so all
    /// faces wind counter-clockwise seen from outside, then validates that
    /// the result is a closed manifold.
    pub fn from_indexed(
        positions: Vec<Vector3<f64>>,
        mut tris: Vec<[u32; 3]>,
    ) -> Result<Self, MeshError> {
        if tris.is_empty() {
            return Err(MeshError::Empty);
        }
        for (t, tri) in tris.iter().enumerate() {
            for &v in tri {
                if v as usize >= positions.len() {
                    return Err(MeshError::IndexOutOfRange {
                        tri: t as u32,
                        vertex: v,
                        count: positions.len(),
                    });
                }
            }
        }
        orient_consistently(&positions, &mut tris)?;

        let verts: Vec<VertexRecord> = positions
            .into_iter()
            .enumerate()
            .map(|(i, p)| VertexRecord::new(p, i as u32))
            .collect();
        let tri_alive = vec![true; tris.len()];
        let mut mesh = SurfaceMesh {
            live_verts: verts.len(),
            live_tris: tris.len(),
            verts,
            tris,
            tri_alive,
            vert_tris: Vec::new(),
        };
        mesh.rebuild_vertex_incidence();
        mesh.validate_closed()?;
        Ok(mesh)
    }

    fn rebuild_vertex_incidence(&mut self) {
        self.vert_tris = vec![Vec::new(); self.verts.len()];
        for (t, tri) in self.tris.iter().enumerate() {
            if self.tri_alive[t] {
                for &v in tri {
                    self.vert_tris[v as usize].push(t as u32);
                }
            }
        }
    }

    pub fn vertex_slots(&self) -> usize {
        self.verts.len()
    }

    pub fn tri_slots(&self) -> usize {
        self.tris.len()
    }

    pub fn live_vertex_count(&self) -> usize {
        self.live_verts
    }

    pub fn live_tri_count(&self) -> usize {
        self.live_tris
    }

    pub fn is_empty(&self) -> bool {
        self.live_tris == 0
    }

    pub fn is_vertex_alive(&self, v: VertexId) -> bool {
        self.verts[v as usize].alive
    }

    pub fn is_tri_alive(&self, t: TriId) -> bool {
        self.tri_alive[t as usize]
    }

    pub fn live_vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.verts
            .iter()
            .enumerate()
            .filter(|(_, r)| r.alive)
            .map(|(i, _)| i as u32)
    }

    pub fn live_tris(&self) -> impl Iterator<Item = (TriId, [u32; 3])> + '_ {
        self.tris
            .iter()
            .enumerate()
            .filter(|(t, _)| self.tri_alive[*t])
            .map(|(t, tri)| (t as u32, *tri))
    }

    pub fn tri(&self, t: TriId) -> [u32; 3] {
        self.tris[t as usize]
    }

    pub fn vertex(&self, v: VertexId) -> &VertexRecord {
        &self.verts[v as usize]
    }

    pub fn vertex_mut(&mut self, v: VertexId) -> &mut VertexRecord {
        &mut self.verts[v as usize]
    }

    pub fn position(&self, v: VertexId) -> Vector3<f64> {
        self.verts[v as usize].position
    }

    /// Ids of incident live triangles, sorted.
    pub fn incident_tris(&self, v: VertexId) -> &[TriId] {
        &self.vert_tris[v as usize]
    }

    /// Sorted unique neighbor vertices of `v`.
    pub fn neighbors(&self, v: VertexId) -> Vec<VertexId> {
        let mut out = Vec::with_capacity(self.vert_tris[v as usize].len() * 2);
        for &t in &self.vert_tris[v as usize] {
            for &w in &self.tris[t as usize] {
                if w != v {
                    out.push(w);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Live triangles incident to the undirected edge `(a, b)`.
    pub fn edge_triangles(&self, a: VertexId, b: VertexId) -> Vec<TriId> {
        self.vert_tris[a as usize]
            .iter()
            .copied()
            .filter(|&t| self.tris[t as usize].contains(&b))
            .collect()
    }

    /// Decomposes the link of `v` into simple cycles. A healthy interior
    /// vertex yields exactly one cycle covering all incident triangles.
    pub(crate) fn link_cycles(&self, v: VertexId) -> Result<Vec<RingCycle>, RingError> {
        let inc = &self.vert_tris[v as usize];
        if inc.len() < 3 {
            return Err(RingError::LowValence { valence: inc.len() });
        }
        // Directed link edges (a -> b, tri), one per incident triangle,
        // ordered so the fan runs counter-clockwise seen from outside.
        let mut edges: Vec<(u32, u32, u32)> = Vec::with_capacity(inc.len());
        for &t in inc {
            let [i, j, k] = self.tris[t as usize];
            let (a, b) = if i == v {
                (j, k)
            } else if j == v {
                (k, i)
            } else {
                (i, j)
            };
            edges.push((a, b, t));
        }
        // Successor lists sorted for deterministic traversal.
        edges.sort_unstable();
        let mut used = vec![false; edges.len()];
        let mut cycles = Vec::new();
        loop {
            let Some(start) = (0..edges.len()).find(|&e| !used[e]) else {
                break;
            };
            // Walk smallest unused successor edges; extract a simple cycle
            // whenever the walk revisits a node on the current path.
            let mut path: Vec<(u32, u32)> = Vec::new(); // (node, edge taken from it)
            let mut node = edges[start].0;
            loop {
                let Some(e) = (0..edges.len())
                    .find(|&e| !used[e] && edges[e].0 == node)
                else {
                    // Stuck: in a balanced link graph this only happens once
                    // the walk has closed every loop through its start.
                    break;
                };
                used[e] = true;
                let next = edges[e].1;
                if let Some(pos) = path.iter().position(|&(n, _)| n == next) {
                    let loop_part: Vec<(u32, u32)> =
                        path.drain(pos..).chain(std::iter::once((node, e as u32))).collect();
                    cycles.push(RingCycle {
                        neighbors: loop_part.iter().map(|&(n, _)| n).collect(),
                        tris: loop_part.iter().map(|&(_, e)| edges[e as usize].2).collect(),
                    });
                    node = next;
                } else {
                    path.push((node, e as u32));
                    node = next;
                }
            }
            debug_assert!(path.is_empty(), "walk left unclosed path at vertex {v}");
        }
        Ok(cycles)
    }

    /// Ordered one-ring of `v`. Fails with [`RingError::TopologyFault`] when
    /// the link is not a single cycle, carrying the maximal orderable subsets
    /// that pinch-off resolution needs.
    pub fn ordered_one_ring(&self, v: VertexId) -> Result<OneRing, RingError> {
        let mut cycles = self.link_cycles(v)?;
        if cycles.len() != 1 {
            return Err(RingError::TopologyFault { cycles });
        }
        let cycle = cycles.pop().expect("one cycle");
        if cycle.neighbors.len() < 3 {
            return Err(RingError::LowValence {
                valence: cycle.neighbors.len(),
            });
        }
        // Canonical start: smallest neighbor id.
        let first = cycle
            .neighbors
            .iter()
            .enumerate()
            .min_by_key(|&(_, &n)| n)
            .map(|(i, _)| i)
            .expect("non-empty cycle");
        let n = cycle.neighbors.len();
        let center = self.position(v);
        let mut neighbors = Vec::with_capacity(n);
        let mut rel = Vec::with_capacity(n);
        for j in 0..n {
            let w = cycle.neighbors[(first + j) % n];
            neighbors.push(w);
            rel.push(self.position(w) - center);
        }
        Ok(OneRing {
            center: v,
            neighbors,
            rel,
        })
    }

    /// Checks the closed-manifold invariant on the live part of the mesh:
    /// every directed edge appears exactly once, its reverse exactly once,
    /// and every vertex link is a single cycle of valence >= 3.
    pub fn validate_closed(&self) -> Result<(), MeshError> {
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for (_, tri) in self.live_tris() {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                *directed.entry((a, b)).or_insert(0) += 1;
            }
        }
        for (_, tri) in self.live_tris() {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let fwd = directed.get(&(a, b)).copied().unwrap_or(0);
                let rev = directed.get(&(b, a)).copied().unwrap_or(0);
                if fwd + rev > 2 {
                    return Err(MeshError::NonManifoldEdge {
                        a: a.min(b),
                        b: a.max(b),
                        count: (fwd + rev) as usize,
                    });
                }
                if fwd == 2 {
                    // Two triangles traverse the edge the same way.
                    return Err(MeshError::NonOrientable);
                }
                if rev == 0 {
                    return Err(MeshError::BoundaryEdge {
                        a: a.min(b),
                        b: a.max(b),
                    });
                }
            }
        }
        for v in self.live_vertices() {
            if let Err(source) = self.ordered_one_ring(v) {
                return Err(MeshError::BadVertex { vertex: v, source });
            }
        }
        Ok(())
    }

    /// Connected components of live vertices, each sorted; components are
    /// ordered by their smallest vertex id.
    pub fn connected_components(&self) -> Vec<Vec<VertexId>> {
        let mut seen = vec![false; self.verts.len()];
        let mut components = Vec::new();
        for v in 0..self.verts.len() as u32 {
            if !self.verts[v as usize].alive || seen[v as usize] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = std::collections::VecDeque::new();
            seen[v as usize] = true;
            queue.push_back(v);
            while let Some(u) = queue.pop_front() {
                comp.push(u);
                for w in self.neighbors(u) {
                    if !seen[w as usize] {
                        seen[w as usize] = true;
                        queue.push_back(w);
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        components
    }

    pub fn tri_area(&self, t: TriId) -> f64 {
        let [a, b, c] = self.tris[t as usize];
        let pa = self.position(a);
        let ab = self.position(b) - pa;
        let ac = self.position(c) - pa;
        0.5 * ab.cross(&ac).norm()
    }

    pub fn total_area(&self) -> f64 {
        self.live_tris().map(|(t, _)| self.tri_area(t)).sum()
    }

    /// Signed volume enclosed by the live triangles (positive for outward
    /// counter-clockwise orientation), as a sum of tetrahedra to the origin.
    pub fn signed_volume(&self) -> f64 {
        self.live_tris()
            .map(|(_, [a, b, c])| {
                let pa = self.position(a);
                let pb = self.position(b);
                let pc = self.position(c);
                pa.dot(&pb.cross(&pc)) / 6.0
            })
            .sum()
    }

    /// Mean length over live undirected edges. Each interior edge is seen by
    /// exactly two triangles, so summing triangle perimeters halves cleanly.
    pub fn mean_edge_length(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for (_, [a, b, c]) in self.live_tris() {
            let pa = self.position(a);
            let pb = self.position(b);
            let pc = self.position(c);
            total += (pb - pa).norm() + (pc - pb).norm() + (pa - pc).norm();
            count += 3;
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }

    pub fn mean_tri_area(&self) -> f64 {
        if self.live_tris == 0 {
            0.0
        } else {
            self.total_area() / self.live_tris as f64
        }
    }

    pub fn bbox(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let mut it = self.live_vertices();
        let first = it.next()?;
        let mut lo = self.position(first);
        let mut hi = lo;
        for v in it {
            let p = self.position(v);
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        Some((lo, hi))
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bbox().map(|(lo, hi)| (hi - lo).norm()).unwrap_or(0.0)
    }

    /// Compacts live vertices (in id order) and triangles into contiguous
    /// arrays, carrying the parent bookkeeping along.
    pub fn compact(&self) -> CompactMesh {
        let mut vertex_map = vec![u32::MAX; self.verts.len()];
        let mut positions = Vec::with_capacity(self.live_verts);
        let mut parents = Vec::with_capacity(self.live_verts);
        for (i, r) in self.verts.iter().enumerate() {
            if r.alive {
                vertex_map[i] = positions.len() as u32;
                positions.push(r.position);
                parents.push(r.parent_id);
            }
        }
        let tris = self
            .live_tris()
            .map(|(_, [a, b, c])| {
                [
                    vertex_map[a as usize],
                    vertex_map[b as usize],
                    vertex_map[c as usize],
                ]
            })
            .collect();
        CompactMesh {
            positions,
            tris,
            parents,
            vertex_map,
        }
    }

    // ---- surgery primitives (used by flow::surgery) ----

    pub(crate) fn kill_triangle(&mut self, t: TriId) {
        if !self.tri_alive[t as usize] {
            return;
        }
        self.tri_alive[t as usize] = false;
        self.live_tris -= 1;
        for &v in &self.tris[t as usize] {
            let list = &mut self.vert_tris[v as usize];
            if let Ok(pos) = list.binary_search(&t) {
                list.remove(pos);
            }
        }
    }

    /// Rewrites one corner of a live triangle from `old` to `new`, keeping
    /// the incidence lists in sync.
    pub(crate) fn replace_vertex_in_tri(&mut self, t: TriId, old: VertexId, new: VertexId) {
        debug_assert!(self.tri_alive[t as usize]);
        let tri = &mut self.tris[t as usize];
        let corner = tri.iter().position(|&v| v == old).expect("old vertex in tri");
        tri[corner] = new;
        let list = &mut self.vert_tris[old as usize];
        if let Ok(pos) = list.binary_search(&t) {
            list.remove(pos);
        }
        let list = &mut self.vert_tris[new as usize];
        if let Err(pos) = list.binary_search(&t) {
            list.insert(pos, t);
        }
    }

    pub(crate) fn spawn_vertex(&mut self, position: Vector3<f64>, parent_id: u32) -> VertexId {
        let id = self.verts.len() as u32;
        self.verts.push(VertexRecord::new(position, parent_id));
        self.vert_tris.push(Vec::new());
        self.live_verts += 1;
        id
    }

    pub(crate) fn kill_vertex(&mut self, v: VertexId) {
        debug_assert!(
            self.vert_tris[v as usize].is_empty(),
            "killing vertex {v} with live triangles"
        );
        if self.verts[v as usize].alive {
            self.verts[v as usize].alive = false;
            self.live_verts -= 1;
        }
    }
}

/// Flips triangles in place until neighbors agree across every edge, then
/// flips whole components whose signed volume is negative, so that all faces
/// end up counter-clockwise seen from outside.
fn orient_consistently(
    positions: &[Vector3<f64>],
    tris: &mut [[u32; 3]],
) -> Result<(), MeshError> {
    let mut edge_tris: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
    for (t, tri) in tris.iter().enumerate() {
        for k in 0..3 {
            let a = tri[k];
            let b = tri[(k + 1) % 3];
            let key = (a.min(b), a.max(b));
            edge_tris.entry(key).or_default().push(t as u32);
        }
    }
    for (&(a, b), inc) in edge_tris.iter() {
        match inc.len() {
            2 => {}
            1 => return Err(MeshError::BoundaryEdge { a, b }),
            n => return Err(MeshError::NonManifoldEdge { a, b, count: n }),
        }
    }

    let direction = |tri: &[u32; 3], flip: bool, a: u32, b: u32| -> bool {
        // true if tri traverses a -> b after applying flip
        for k in 0..3 {
            let (x, y) = (tri[k], tri[(k + 1) % 3]);
            if (x, y) == (a, b) {
                return !flip;
            }
            if (x, y) == (b, a) {
                return flip;
            }
        }
        unreachable!("edge not in triangle");
    };

    let mut state: Vec<Option<bool>> = vec![None; tris.len()]; // flip flag
    for seed in 0..tris.len() {
        if state[seed].is_some() {
            continue;
        }
        state[seed] = Some(false);
        let mut component = vec![seed as u32];
        let mut queue = std::collections::VecDeque::from([seed as u32]);
        while let Some(t) = queue.pop_front() {
            let flip_t = state[t as usize].expect("visited");
            let tri = tris[t as usize];
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                let &other = edge_tris[&key]
                    .iter()
                    .find(|&&o| o != t)
                    .expect("closed edge");
                // Consistent orientation: the two triangles traverse the
                // shared edge in opposite directions.
                let need = !direction(&tris[t as usize], flip_t, a, b);
                let have = direction(&tris[other as usize], false, a, b);
                let flip_other = need != have;
                match state[other as usize] {
                    None => {
                        state[other as usize] = Some(flip_other);
                        component.push(other);
                        queue.push_back(other);
                    }
                    Some(existing) => {
                        if existing != flip_other {
                            return Err(MeshError::NonOrientable);
                        }
                    }
                }
            }
        }
        // Outward check per component: flip everything if it encloses
        // negative volume.
        let volume: f64 = component
            .iter()
            .map(|&t| {
                let [a, b, c] = oriented(&tris[t as usize], state[t as usize].unwrap());
                positions[a as usize]
                    .dot(&positions[b as usize].cross(&positions[c as usize]))
                    / 6.0
            })
            .sum();
        if volume < 0.0 {
            for &t in &component {
                let s = state[t as usize].as_mut().unwrap();
                *s = !*s;
            }
        }
    }
    for (t, tri) in tris.iter_mut().enumerate() {
        if state[t].unwrap_or(false) {
            tri.swap(1, 2);
        }
    }
    Ok(())
}

fn oriented(tri: &[u32; 3], flip: bool) -> [u32; 3] {
    if flip {
        [tri[0], tri[2], tri[1]]
    } else {
        *tri
    }
}
