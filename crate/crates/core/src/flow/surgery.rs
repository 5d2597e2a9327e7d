//! Degeneracy repair: midpoint vertex merges, duplicate-face cleanup,
//! pinched-link splitting and removal of vanished components.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::Vector3;

use crate::mesh::{RingError, SurfaceMesh, TriId, VertexId};

use super::{FlowError, FlowEvent, FlowState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeTrigger {
    SmallEdge,
    SmallAngle,
    SmallFace,
    /// Forced merge after a cache refresh hit a singular or degenerate fit.
    SingularFit,
}

impl fmt::Display for MergeTrigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MergeTrigger::SmallEdge => "small-edge",
            MergeTrigger::SmallAngle => "small-angle",
            MergeTrigger::SmallFace => "small-face",
            MergeTrigger::SingularFit => "singular-fit",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct MergeCandidate {
    pub a: VertexId,
    pub b: VertexId,
    pub trigger: MergeTrigger,
}

fn edge_key(a: VertexId, b: VertexId) -> (VertexId, VertexId) {
    (a.min(b), a.max(b))
}

fn shortest_edge_of(mesh: &SurfaceMesh, tri: [u32; 3]) -> (VertexId, VertexId) {
    let [a, b, c] = tri;
    let mut best = edge_key(a, b);
    let mut best_len = (mesh.position(a) - mesh.position(b)).norm();
    for (i, j) in [(b, c), (c, a)] {
        let len = (mesh.position(i) - mesh.position(j)).norm();
        if len < best_len {
            best_len = len;
            best = edge_key(i, j);
        }
    }
    best
}

/// Flags edges below eps_edge or below eps_disparity times the mean of the
/// other edges at their endpoints, plus the shortest edge of any triangle
/// with a corner angle below eps_angle or area below eps_face. Candidates
/// come out in ascending (a, b) order; the first trigger to flag a pair wins.
pub(crate) fn detect_degeneracies(
    mesh: &SurfaceMesh,
    eps_edge: f64,
    eps_disparity: f64,
    eps_angle: f64,
    eps_face: f64,
) -> Vec<MergeCandidate> {
    let mut flagged: BTreeMap<(VertexId, VertexId), MergeTrigger> = BTreeMap::new();
    let mut edges: BTreeMap<(VertexId, VertexId), f64> = BTreeMap::new();
    for (_, [a, b, c]) in mesh.live_tris() {
        for (i, j) in [(a, b), (b, c), (c, a)] {
            edges
                .entry(edge_key(i, j))
                .or_insert_with(|| (mesh.position(i) - mesh.position(j)).norm());
        }
    }
    let mut incident: BTreeMap<VertexId, (f64, u32)> = BTreeMap::new();
    for (&(i, j), &len) in &edges {
        for v in [i, j] {
            let e = incident.entry(v).or_insert((0.0, 0));
            e.0 += len;
            e.1 += 1;
        }
    }
    for (&(i, j), &len) in &edges {
        if len < eps_edge {
            flagged.entry((i, j)).or_insert(MergeTrigger::SmallEdge);
            continue;
        }
        let (si, ci) = incident[&i];
        let (sj, cj) = incident[&j];
        let others = ci + cj - 2;
        if others > 0 && len < eps_disparity * (si + sj - 2.0 * len) / others as f64 {
            flagged.entry((i, j)).or_insert(MergeTrigger::SmallEdge);
        }
    }
    for (t, tri) in mesh.live_tris() {
        let [a, b, c] = tri;
        let pa = mesh.position(a);
        let pb = mesh.position(b);
        let pc = mesh.position(c);
        let mut min_angle = f64::INFINITY;
        for (p, q, r) in [(pa, pb, pc), (pb, pc, pa), (pc, pa, pb)] {
            let u = q - p;
            let v = r - p;
            min_angle = min_angle.min(u.cross(&v).norm().atan2(u.dot(&v)));
        }
        if min_angle < eps_angle {
            flagged
                .entry(shortest_edge_of(mesh, tri))
                .or_insert(MergeTrigger::SmallAngle);
        }
        if mesh.tri_area(t) < eps_face {
            flagged
                .entry(shortest_edge_of(mesh, tri))
                .or_insert(MergeTrigger::SmallFace);
        }
    }
    flagged
        .into_iter()
        .map(|((a, b), trigger)| MergeCandidate { a, b, trigger })
        .collect()
}

/// Live vertices connected to v, or None if the component exceeds the cap.
fn small_component(mesh: &SurfaceMesh, v: VertexId, cap: usize) -> Option<Vec<VertexId>> {
    let mut seen = BTreeSet::from([v]);
    let mut queue = vec![v];
    while let Some(u) = queue.pop() {
        for n in mesh.neighbors(u) {
            if seen.insert(n) {
                if seen.len() > cap {
                    return None;
                }
                queue.push(n);
            }
        }
    }
    Some(seen.into_iter().collect())
}

/// Merges the pair unless the component is already at the smallest closed
/// surface; grinding below a tetrahedron only produces pillow debris that
/// dies without a trace, so such remnants vanish whole, on the record.
pub(crate) fn merge_or_vanish(
    state: &mut FlowState,
    a: VertexId,
    b: VertexId,
    trigger: MergeTrigger,
) -> Result<Option<VertexId>, FlowError> {
    if let Some(comp) = small_component(&state.mesh, a, 4) {
        vanish_component(state, &comp);
        return Ok(None);
    }
    merge_vertices(state, a, b, trigger).map(Some)
}

/// Kills duplicate face pairs (two live triangles over the same vertex set)
/// reachable from the seed set, cascading, and kills vertices left with no
/// triangles.
pub(crate) fn cleanup_pillows(state: &mut FlowState, mut work: BTreeSet<VertexId>) {
    while let Some(v) = work.pop_first() {
        if !state.mesh.is_vertex_alive(v) {
            continue;
        }
        let mut groups: BTreeMap<[u32; 3], Vec<TriId>> = BTreeMap::new();
        for &t in state.mesh.incident_tris(v) {
            let mut key = state.mesh.tri(t);
            key.sort_unstable();
            groups.entry(key).or_default().push(t);
        }
        for (key, tris) in groups {
            for pair in tris.chunks(2) {
                if let [t1, t2] = *pair {
                    state.mesh.kill_triangle(t1);
                    state.mesh.kill_triangle(t2);
                    work.extend(key);
                }
            }
        }
        if state.mesh.is_vertex_alive(v) && state.mesh.incident_tris(v).is_empty() {
            state.mesh.kill_vertex(v);
        }
    }
}

/// Collapses the pair into one vertex at the midpoint. The smaller index
/// survives and keeps its own parent pointer; triangles shared by the pair
/// die, duplicate-face fallout is cleaned up, and the survivor plus its
/// neighbors are marked stale.
pub(crate) fn merge_vertices(
    state: &mut FlowState,
    a: VertexId,
    b: VertexId,
    trigger: MergeTrigger,
) -> Result<VertexId, FlowError> {
    if a == b {
        return Err(state.unrecoverable(a, "merge of a vertex with itself"));
    }
    let survivor = a.min(b);
    let removed = a.max(b);
    let position = (state.mesh.position(survivor) + state.mesh.position(removed)) * 0.5;
    state.mesh.vertex_mut(survivor).position = position;
    for t in state.mesh.edge_triangles(survivor, removed) {
        state.mesh.kill_triangle(t);
    }
    let moved: Vec<TriId> = state.mesh.incident_tris(removed).to_vec();
    for t in moved {
        state.mesh.replace_vertex_in_tri(t, removed, survivor);
    }
    state.mesh.kill_vertex(removed);
    let mut seeds: BTreeSet<VertexId> = BTreeSet::from([survivor]);
    seeds.extend(state.mesh.neighbors(survivor));
    cleanup_pillows(state, seeds);
    if state.mesh.is_vertex_alive(survivor) {
        state.expire_vertex(survivor);
        for n in state.mesh.neighbors(survivor) {
            state.expire_vertex(n);
        }
    }
    state.events.push(FlowEvent::Merge {
        time: state.clock,
        survivor,
        removed,
        trigger,
        position,
    });
    Ok(survivor)
}

/// Splits a vertex whose link is not a single cycle into one copy per
/// orderable fan, cascading depth-first in vertex-index order to neighbors
/// whose links become faulty. Records a single Split event covering the
/// whole cascade.
pub(crate) fn resolve_topology(state: &mut FlowState, v: VertexId) -> Result<(), FlowError> {
    let components_before = state.mesh.connected_components().len();
    let mut copies: Vec<VertexId> = Vec::new();
    let mut split_any = false;
    let mut stack: Vec<VertexId> = vec![v];
    while let Some(u) = stack.pop() {
        if !state.mesh.is_vertex_alive(u) {
            continue;
        }
        let cycles = match state.mesh.link_cycles(u) {
            Ok(cycles) => {
                if cycles.len() < 2 {
                    continue;
                }
                cycles
            }
            Err(RingError::LowValence { .. }) => {
                cleanup_pillows(state, BTreeSet::from([u]));
                if state.mesh.is_vertex_alive(u) && state.mesh.link_cycles(u).is_err() {
                    return Err(state.unrecoverable(u, "low-valence vertex survived cleanup"));
                }
                continue;
            }
            Err(RingError::TopologyFault { cycles }) => cycles,
        };
        let record = state.mesh.vertex(u).clone();
        let mut affected: BTreeSet<VertexId> = BTreeSet::new();
        for cycle in cycles {
            let copy = state.mesh.spawn_vertex(record.position, record.parent_id);
            {
                let rec = state.mesh.vertex_mut(copy);
                rec.normal_cache = record.normal_cache;
                rec.curvature_cache = record.curvature_cache;
                rec.expiry_time = state.clock;
                rec.accuracy_dt = record.accuracy_dt;
            }
            for t in cycle.tris {
                state.mesh.replace_vertex_in_tri(t, u, copy);
            }
            copies.push(copy);
            affected.insert(copy);
            affected.extend(cycle.neighbors);
        }
        state.mesh.kill_vertex(u);
        split_any = true;
        for &n in &affected {
            if state.mesh.is_vertex_alive(n) {
                state.expire_vertex(n);
            }
        }
        for n in affected.into_iter().rev() {
            stack.push(n);
        }
    }
    if split_any {
        let components_after = state.mesh.connected_components().len();
        state.events.push(FlowEvent::Split {
            time: state.clock,
            vertex: v,
            copies,
            components_before,
            components_after,
        });
    }
    Ok(())
}

/// Re-checks the given vertices and splits any whose link is faulty.
pub(crate) fn resolve_faults(
    state: &mut FlowState,
    touched: BTreeSet<VertexId>,
) -> Result<(), FlowError> {
    for v in touched {
        if !state.mesh.is_vertex_alive(v) {
            continue;
        }
        match state.mesh.link_cycles(v) {
            Ok(cycles) if cycles.len() < 2 => {}
            Ok(_) => resolve_topology(state, v)?,
            Err(RingError::TopologyFault { .. }) => resolve_topology(state, v)?,
            Err(RingError::LowValence { .. }) => {
                cleanup_pillows(state, BTreeSet::from([v]));
                if state.mesh.is_vertex_alive(v) && state.mesh.link_cycles(v).is_err() {
                    return Err(state.unrecoverable(v, "low-valence vertex survived cleanup"));
                }
            }
        }
    }
    Ok(())
}

/// Repeats detect-merge-resolve until the mesh is free of degeneracies.
/// Thresholds rescale each round from the current mean edge and face area.
pub(crate) fn surgery_pass(state: &mut FlowState) -> Result<bool, FlowError> {
    let mut any = false;
    let mut rounds = 0u32;
    loop {
        if state.mesh.is_empty() {
            return Ok(any);
        }
        let eps_edge = (state.config.edge_fraction * state.mesh.mean_edge_length())
            .max(state.config.edge_floor_fraction * state.initial_mean_edge());
        let eps_disparity = state.config.edge_disparity_fraction;
        let eps_angle = state.config.min_angle_deg.to_radians();
        let eps_face = state.config.face_fraction * state.mesh.mean_tri_area();
        let candidates =
            detect_degeneracies(&state.mesh, eps_edge, eps_disparity, eps_angle, eps_face);
        if candidates.is_empty() {
            return Ok(any);
        }
        // A component whose every edge sits below the merge threshold would
        // be ground to nothing by the merge cascade without a trace; delete
        // it whole so the vanish is on the record.
        let mut max_edge: BTreeMap<VertexId, f64> = BTreeMap::new();
        for (_, [a, b, c]) in state.mesh.live_tris() {
            for (i, j) in [(a, b), (b, c), (c, a)] {
                let len = (state.mesh.position(i) - state.mesh.position(j)).norm();
                for v in [i, j] {
                    let e = max_edge.entry(v).or_insert(0.0f64);
                    *e = e.max(len);
                }
            }
        }
        for comp in state.mesh.connected_components() {
            if comp.iter().all(|v| max_edge.get(v).map_or(true, |&e| e < eps_edge)) {
                vanish_component(state, &comp);
                any = true;
            }
        }
        if state.mesh.is_empty() {
            return Ok(any);
        }
        let mut touched: BTreeSet<VertexId> = BTreeSet::new();
        let mut merged = false;
        for cand in candidates {
            if !state.mesh.is_vertex_alive(cand.a) || !state.mesh.is_vertex_alive(cand.b) {
                continue;
            }
            if state.mesh.edge_triangles(cand.a, cand.b).is_empty() {
                continue;
            }
            merged = true;
            any = true;
            if let Some(survivor) = merge_or_vanish(state, cand.a, cand.b, cand.trigger)? {
                if state.mesh.is_vertex_alive(survivor) {
                    touched.insert(survivor);
                    touched.extend(state.mesh.neighbors(survivor));
                }
            }
        }
        resolve_faults(state, touched)?;
        if !merged {
            // Every candidate went stale before it could be applied.
            return Ok(any);
        }
        rounds += 1;
        if rounds > 10_000 {
            return Err(state.unrecoverable(0, "surgery did not converge"));
        }
    }
}

/// Deletes one whole component and records its Vanish event.
fn vanish_component(state: &mut FlowState, comp: &[VertexId]) {
    let mut centroid = Vector3::zeros();
    for &v in comp {
        centroid += state.mesh.position(v);
    }
    centroid /= comp.len() as f64;
    let mut tris: BTreeSet<TriId> = BTreeSet::new();
    for &v in comp {
        tris.extend(state.mesh.incident_tris(v).iter().copied());
    }
    for t in tris {
        state.mesh.kill_triangle(t);
    }
    for &v in comp {
        state.mesh.kill_vertex(v);
    }
    state.events.push(FlowEvent::Vanish {
        time: state.clock,
        vertices: comp.len(),
        centroid,
    });
}

/// Deletes components with fewer than 4 vertices or area below the vanish
/// floor; records one Vanish event per deleted component.
pub(crate) fn remove_vanished(state: &mut FlowState) -> bool {
    let floor = state.config.vanish_area_fraction * state.initial_area();
    let components = state.mesh.connected_components();
    if components.is_empty() {
        return false;
    }
    let mut comp_of = vec![usize::MAX; state.mesh.vertex_slots()];
    for (i, comp) in components.iter().enumerate() {
        for &v in comp {
            comp_of[v as usize] = i;
        }
    }
    let mut areas = vec![0.0f64; components.len()];
    for (t, [a, _, _]) in state.mesh.live_tris() {
        areas[comp_of[a as usize]] += state.mesh.tri_area(t);
    }
    let mut removed = false;
    for (i, comp) in components.iter().enumerate() {
        if comp.len() >= 4 && areas[i] >= floor {
            continue;
        }
        vanish_component(state, comp);
        removed = true;
    }
    removed
}
