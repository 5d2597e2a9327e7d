//! Mean curvature flow by forward Euler with per-vertex staleness scheduling.
//!
//! Every vertex carries a cached unit normal and mean curvature plus an
//! expiry clock `clock + C_s * min_edge / |kappa|`. A step refreshes exactly
//! the caches that are stale now or would go stale during the step, moves
//! every vertex by `-dt * kappa * n`, then repairs the mesh: short edges,
//! slivers and tiny faces merge vertices at their midpoint, pinched links
//! split into one vertex copy per orderable fan, and components below the
//! size floor vanish. Snapshots at fixed checkpoint times carry a parent map
//! back to the previous snapshot so per-vertex data can be projected forward.

mod surgery;

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::differential::{self, DifferentialError};
use crate::mesh::io::obj_quantize;
use crate::mesh::{CompactMesh, MeshError, RingError, SurfaceMesh, VertexId};

pub use surgery::MergeTrigger;

#[derive(Debug, Clone)]
pub struct FlowConfig {
    /// C_s in `expiry = clock + C_s * min_edge / |kappa|`.
    pub staleness_constant: f64,
    /// Step cap as a fraction of `min_v min_edge(v) / |kappa(v)|`, so no
    /// vertex moves more than that fraction of its shortest edge per step.
    pub accuracy_factor: f64,
    /// Parabolic step cap as a fraction of `min_edge^2`. Forward Euler on a
    /// curvature flow is only stable below ~min_edge^2 / 4; past it,
    /// grid-scale crumple modes grow until curvature noise stalls the flow.
    pub stability_factor: f64,
    /// Parabolic cap on the staleness window as a fraction of `min_edge^2`.
    /// A frozen velocity held for longer than ~min_edge^2 overshoots the
    /// grid-scale feature that produced it, so desynchronized refreshes pump
    /// a standing sawtooth; this cap keeps the per-window flight below the
    /// feature scale. The curvature window still binds where |kappa| is
    /// large (necks, pinches), which is the regime it was designed for.
    pub window_stability_factor: f64,
    /// Expiry assigned where |kappa| falls below the curvature floor, and a
    /// hard ceiling on every expiry interval.
    pub dt_max: f64,
    /// Curvature floor as a fraction of 1 / (initial bbox diagonal).
    pub curvature_floor_rel: f64,
    /// Merge edges shorter than this fraction of the current mean edge.
    pub edge_fraction: f64,
    /// Merge edges shorter than this fraction of the mean length of the
    /// other edges incident to their endpoints. Catches merge debris that
    /// hovers above the global fraction while sitting far below its own
    /// neighborhood scale; one such edge pins the global step through the
    /// parabolic accuracy cap.
    pub edge_disparity_fraction: f64,
    /// Merge edges shorter than this fraction of the initial mean edge.
    /// A shrinking component coarsens once it falls far below the initial
    /// resolution instead of carrying its full vertex count into the point
    /// singularity, where ever-shorter edges would pin the global step
    /// quadratically. Engages only below ~this fraction of the initial
    /// linear scale, where the surface is past resolving anyway.
    pub edge_floor_fraction: f64,
    /// Merge the shortest edge of triangles with a corner angle below this.
    pub min_angle_deg: f64,
    /// Merge the shortest edge of triangles with area below this fraction of
    /// the current mean face area.
    pub face_fraction: f64,
    /// Delete components with area below this fraction of the initial total
    /// area (components with fewer than 4 vertices are always deleted).
    pub vanish_area_fraction: f64,
    /// Snapshot spacing in flow time.
    pub checkpoint_interval: f64,
    pub max_steps: u64,
    /// Re-validate closedness after every step that performed surgery.
    pub validate_after_surgery: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            staleness_constant: 0.5,
            accuracy_factor: 0.25,
            stability_factor: 0.125,
            window_stability_factor: 0.25,
            dt_max: 0.05,
            curvature_floor_rel: 1e-12,
            edge_fraction: 0.05,
            edge_disparity_fraction: 0.25,
            edge_floor_fraction: 0.25,
            min_angle_deg: 2.0,
            face_fraction: 1e-4,
            vanish_area_fraction: 1e-10,
            checkpoint_interval: 5e-3,
            max_steps: 500_000,
            validate_after_surgery: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("flow: invalid mesh at t={time}: {source}")]
    Mesh {
        time: f64,
        #[source]
        source: MeshError,
    },
    #[error("flow: step limit {max_steps} exceeded at t={time}")]
    StepLimit { max_steps: u64, time: f64 },
    #[error("flow: unrecoverable state at t={time}, vertex {vertex}: {message}")]
    Unrecoverable {
        time: f64,
        vertex: VertexId,
        message: String,
    },
}

#[derive(Debug, Clone)]
pub enum FlowEvent {
    Merge {
        time: f64,
        survivor: VertexId,
        removed: VertexId,
        trigger: MergeTrigger,
        position: Vector3<f64>,
    },
    Split {
        time: f64,
        vertex: VertexId,
        copies: Vec<VertexId>,
        components_before: usize,
        components_after: usize,
    },
    Vanish {
        time: f64,
        vertices: usize,
        centroid: Vector3<f64>,
    },
}

impl fmt::Display for FlowEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowEvent::Merge {
                time,
                survivor,
                removed,
                trigger,
                position,
            } => write!(
                f,
                "t={time} MERGE survivor={survivor} removed={removed} trigger={trigger} \
                 position=({},{},{})",
                position.x, position.y, position.z
            ),
            FlowEvent::Split {
                time,
                vertex,
                copies,
                components_before,
                components_after,
            } => {
                let list = copies
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                write!(
                    f,
                    "t={time} SPLIT vertex={vertex} copies=[{list}] \
                     components={components_before}->{components_after}"
                )
            }
            FlowEvent::Vanish {
                time,
                vertices,
                centroid,
            } => write!(
                f,
                "t={time} VANISH vertices={vertices} centroid=({},{},{})",
                centroid.x, centroid.y, centroid.z
            ),
        }
    }
}

/// One planned step: the refreshes already applied and the chosen dt.
#[derive(Debug, Clone)]
pub struct StepPlan {
    pub dt: f64,
    pub refresh_set: Vec<VertexId>,
}

/// Mesh snapshot at a checkpoint. Positions are quantized through the OBJ
/// text format so downstream stages see the same bits whether they consume
/// the snapshot in memory or re-read it from disk.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub time: f64,
    pub mesh: CompactMesh,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Termination {
    Extinct,
    StepLimit,
}

#[derive(Debug)]
pub struct FlowOutcome {
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<FlowEvent>,
    pub termination: Termination,
    /// Clock value when the mesh became empty (or when the run aborted).
    pub extinction_time: f64,
    pub steps: u64,
}

/// Cache refresh result for one vertex.
struct RefreshData {
    normal: Vector3<f64>,
    kappa: f64,
    min_edge: f64,
}

enum FaultKind {
    Ring(RingError),
    DegenerateNormal,
    SingularFit,
    ZeroEdge,
}

struct PlanFault {
    vertex: VertexId,
    kind: FaultKind,
}

pub struct FlowState {
    pub mesh: SurfaceMesh,
    pub clock: f64,
    pub events: Vec<FlowEvent>,
    pub steps: u64,
    pub config: FlowConfig,
    /// Absolute curvature floor, fixed from the initial bounding box.
    curvature_floor: f64,
    /// Initial total area, fixed reference for the vanish floor.
    initial_area: f64,
    /// Initial mean edge length, fixed reference for the merge floor.
    initial_mean_edge: f64,
}

impl FlowState {
    pub fn new(mesh: SurfaceMesh, config: FlowConfig) -> Result<Self, FlowError> {
        mesh.validate_closed()
            .map_err(|source| FlowError::Mesh { time: 0.0, source })?;
        let diag = mesh.bbox_diagonal();
        let curvature_floor = if diag > 0.0 {
            config.curvature_floor_rel / diag
        } else {
            config.curvature_floor_rel
        };
        let initial_area = mesh.total_area();
        let initial_mean_edge = mesh.mean_edge_length();
        Ok(FlowState {
            mesh,
            clock: 0.0,
            events: Vec::new(),
            steps: 0,
            config,
            curvature_floor,
            initial_area,
            initial_mean_edge,
        })
    }

    pub fn initial_area(&self) -> f64 {
        self.initial_area
    }

    pub fn initial_mean_edge(&self) -> f64 {
        self.initial_mean_edge
    }

    /// Staleness window for a fresh cache: C_s * min_edge / |kappa|, capped
    /// by the parabolic bound and dt_max, with the capped value also used
    /// below the curvature floor.
    fn expiration_window(&self, min_edge: f64, kappa: f64) -> f64 {
        let cap = (self.config.window_stability_factor * min_edge * min_edge)
            .min(self.config.dt_max);
        if kappa.abs() < self.curvature_floor {
            cap
        } else {
            (self.config.staleness_constant * min_edge / kappa.abs()).min(cap)
        }
    }

    fn compute_refresh(&self, v: VertexId) -> Result<RefreshData, FaultKind> {
        let ring = self.mesh.ordered_one_ring(v).map_err(FaultKind::Ring)?;
        let min_edge = ring.rel.iter().map(|r| r.norm()).fold(f64::INFINITY, f64::min);
        if !(min_edge > 0.0) {
            return Err(FaultKind::ZeroEdge);
        }
        let est = differential::estimate_normal(&ring).map_err(|_| FaultKind::DegenerateNormal)?;
        let frame = differential::build_local_frame(&est.normal);
        let coeffs = match differential::fit_quadratic(&ring, &frame) {
            Ok(c) => c,
            Err(DifferentialError::SingularFit { .. }) => return Err(FaultKind::SingularFit),
            Err(DifferentialError::DegenerateNormal) => return Err(FaultKind::DegenerateNormal),
        };
        Ok(RefreshData {
            normal: est.normal,
            kappa: differential::mean_curvature(&coeffs),
            min_edge,
        })
    }

    /// Refreshes the given vertices in parallel; on failure reports the
    /// lowest-index faulting vertex and still applies the successes.
    fn refresh_batch(&mut self, verts: &[VertexId]) -> Result<(), PlanFault> {
        let results: Vec<(VertexId, Result<RefreshData, FaultKind>)> = verts
            .par_iter()
            .map(|&v| (v, self.compute_refresh(v)))
            .collect();
        let mut fault: Option<PlanFault> = None;
        for (v, res) in results {
            match res {
                Ok(data) => {
                    let window = self.expiration_window(data.min_edge, data.kappa);
                    let floor = self.curvature_floor;
                    let accuracy = (self.config.accuracy_factor * data.min_edge
                        / data.kappa.abs().max(floor))
                    .min(self.config.stability_factor * data.min_edge * data.min_edge);
                    let rec = self.mesh.vertex_mut(v);
                    rec.normal_cache = data.normal;
                    rec.curvature_cache = data.kappa;
                    rec.expiry_time = self.clock + window;
                    rec.accuracy_dt = accuracy;
                }
                Err(kind) => {
                    if fault.is_none() {
                        fault = Some(PlanFault { vertex: v, kind });
                    }
                }
            }
        }
        match fault {
            Some(f) => Err(f),
            None => Ok(()),
        }
    }

    /// Refreshes every cache that is stale now or would go stale during the
    /// tentative step (accuracy cap and checkpoint), then picks
    /// dt = min(tentative, soonest post-refresh expiry - clock).
    ///
    /// Stale-but-unrefreshed expiries must not bind dt directly, or a cloud
    /// of staggered expiry windows degrades into one-expiry-per-step crawls.
    fn plan_step(&mut self, until: f64) -> Result<StepPlan, PlanFault> {
        let expired: Vec<VertexId> = self
            .mesh
            .live_vertices()
            .filter(|&v| self.mesh.vertex(v).expiry_time <= self.clock)
            .collect();
        let mut refresh_set: BTreeSet<VertexId> = expired.iter().copied().collect();
        self.refresh_batch(&expired)?;
        loop {
            let mut accuracy = f64::INFINITY;
            for v in self.mesh.live_vertices() {
                accuracy = accuracy.min(self.mesh.vertex(v).accuracy_dt);
            }
            let tentative = accuracy.min(until - self.clock);
            let expiring: Vec<VertexId> = self
                .mesh
                .live_vertices()
                .filter(|&v| {
                    !refresh_set.contains(&v)
                        && self.mesh.vertex(v).expiry_time < self.clock + tentative
                })
                .collect();
            if expiring.is_empty() {
                let mut soonest = f64::INFINITY;
                for v in self.mesh.live_vertices() {
                    soonest = soonest.min(self.mesh.vertex(v).expiry_time);
                }
                let dt = tentative.min(soonest - self.clock);
                debug_assert!(dt > 0.0, "planned dt must be positive");
                return Ok(StepPlan {
                    dt,
                    refresh_set: refresh_set.into_iter().collect(),
                });
            }
            refresh_set.extend(expiring.iter().copied());
            self.refresh_batch(&expiring)?;
        }
    }

    /// Moves every vertex by -dt * kappa * n using its cached values.
    fn advance(&mut self, plan: &StepPlan) {
        let dt = plan.dt;
        let deadline = self.clock + dt;
        for v in 0..self.mesh.vertex_slots() as VertexId {
            if !self.mesh.is_vertex_alive(v) {
                continue;
            }
            let rec = self.mesh.vertex_mut(v);
            debug_assert!(
                rec.expiry_time >= deadline - 1e-12 * dt.abs().max(1.0),
                "vertex {v} moved with a cache past its expiry"
            );
            rec.position -= dt * rec.curvature_cache * rec.normal_cache;
        }
        self.clock = deadline;
    }

    /// Marks a vertex (and, for merges, its neighborhood) stale.
    fn expire_vertex(&mut self, v: VertexId) {
        let clock = self.clock;
        self.mesh.vertex_mut(v).expiry_time = clock;
    }

    fn unrecoverable(&self, vertex: VertexId, message: impl Into<String>) -> FlowError {
        FlowError::Unrecoverable {
            time: self.clock,
            vertex,
            message: message.into(),
        }
    }

    /// Handles a refresh fault: pinched links split, everything else merges
    /// the vertex into its nearest neighbor.
    fn handle_fault(&mut self, fault: PlanFault) -> Result<(), FlowError> {
        let v = fault.vertex;
        match fault.kind {
            FaultKind::Ring(RingError::TopologyFault { .. }) => {
                surgery::resolve_topology(self, v)?;
            }
            FaultKind::Ring(RingError::LowValence { .. }) => {
                surgery::cleanup_pillows(self, BTreeSet::from([v]));
                if self.mesh.is_vertex_alive(v) && self.mesh.link_cycles(v).is_err() {
                    return Err(self.unrecoverable(v, "low-valence vertex survived cleanup"));
                }
            }
            FaultKind::DegenerateNormal | FaultKind::SingularFit | FaultKind::ZeroEdge => {
                let neighbors = self.mesh.neighbors(v);
                let nearest = neighbors
                    .iter()
                    .copied()
                    .min_by(|&a, &b| {
                        let da = (self.mesh.position(a) - self.mesh.position(v)).norm();
                        let db = (self.mesh.position(b) - self.mesh.position(v)).norm();
                        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                    });
                match nearest {
                    Some(n) => {
                        let merged =
                            surgery::merge_or_vanish(self, v, n, MergeTrigger::SingularFit)?;
                        let mut touched: BTreeSet<VertexId> = BTreeSet::new();
                        if let Some(survivor) = merged {
                            if self.mesh.is_vertex_alive(survivor) {
                                touched.insert(survivor);
                                touched.extend(self.mesh.neighbors(survivor));
                            }
                        }
                        surgery::resolve_faults(self, touched)?;
                    }
                    None => {
                        if self.mesh.incident_tris(v).is_empty() {
                            self.mesh.kill_vertex(v);
                        } else {
                            return Err(self.unrecoverable(v, "faulted vertex has no neighbors"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// One full step: plan (with fault-triggered surgery and replan), move,
    /// degeneracy surgery, vanish check.
    pub fn step(&mut self, until: f64) -> Result<(), FlowError> {
        if self.steps >= self.config.max_steps {
            return Err(FlowError::StepLimit {
                max_steps: self.config.max_steps,
                time: self.clock,
            });
        }
        let mut surgery_done = false;
        let mut replans = 0u32;
        loop {
            match self.plan_step(until) {
                Ok(plan) => {
                    self.advance(&plan);
                    break;
                }
                Err(fault) => {
                    let vertex = fault.vertex;
                    self.handle_fault(fault)?;
                    surgery_done = true;
                    replans += 1;
                    if replans > 10_000 {
                        return Err(self.unrecoverable(vertex, "replan limit exceeded"));
                    }
                }
            }
        }
        surgery_done |= surgery::surgery_pass(self)?;
        surgery_done |= surgery::remove_vanished(self);
        if surgery_done && self.config.validate_after_surgery && !self.mesh.is_empty() {
            self.mesh.validate_closed().map_err(|source| FlowError::Mesh {
                time: self.clock,
                source,
            })?;
        }
        self.steps += 1;
        Ok(())
    }

    /// Compacts the live mesh into a snapshot whose positions round-trip the
    /// OBJ format, then rebases every live vertex's parent pointer onto the
    /// snapshot's own numbering.
    pub fn emit_snapshot(&mut self) -> Snapshot {
        let mut compact = self.mesh.compact();
        for p in &mut compact.positions {
            p.x = obj_quantize(p.x);
            p.y = obj_quantize(p.y);
            p.z = obj_quantize(p.z);
        }
        for v in 0..self.mesh.vertex_slots() as VertexId {
            if self.mesh.is_vertex_alive(v) {
                let id = compact.vertex_map[v as usize];
                self.mesh.vertex_mut(v).parent_id = id;
            }
        }
        Snapshot {
            time: self.clock,
            mesh: compact,
        }
    }
}

/// Runs the flow until the mesh vanishes, emitting a snapshot at t = 0 and at
/// every multiple of the checkpoint interval.
///
/// Deterministic: identical input and config give bit-identical snapshots
/// and event logs, independent of thread count.
pub fn run_to_extinction(mesh: SurfaceMesh, config: FlowConfig) -> Result<FlowOutcome, FlowError> {
    let mut state = FlowState::new(mesh, config)?;
    let interval = state.config.checkpoint_interval;
    assert!(interval > 0.0, "checkpoint interval must be positive");
    let mut snapshots = vec![state.emit_snapshot()];
    let mut checkpoint = 1u64;
    let termination = 'run: loop {
        if state.mesh.is_empty() {
            break Termination::Extinct;
        }
        let target = interval * checkpoint as f64;
        while state.clock + 1e-9 * interval < target {
            if state.mesh.is_empty() {
                break 'run Termination::Extinct;
            }
            match state.step(target) {
                Ok(()) => {}
                Err(FlowError::StepLimit { .. }) => break 'run Termination::StepLimit,
                Err(e) => return Err(e),
            }
        }
        if !state.mesh.is_empty() {
            if (state.clock - target).abs() <= 1e-9 * interval {
                state.clock = target;
            }
            snapshots.push(state.emit_snapshot());
        }
        checkpoint += 1;
    };
    Ok(FlowOutcome {
        snapshots,
        events: state.events,
        termination,
        extinction_time: state.clock,
        steps: state.steps,
    })
}


#[cfg(test)]
mod debug_probe {
    use super::*;
    use crate::mesh::io::{load_mesh, MeshFormat};
    use std::path::Path;
    use std::time::Instant;

    #[test]
    #[ignore]
    fn trace_dumbbell_progress() {
        let mesh = load_mesh(Path::new("/tmp/smoke/db_sym.obj"), MeshFormat::Obj).unwrap();
        let mut state = FlowState::new(mesh, FlowConfig::default()).unwrap();
        let interval = 5e-3;
        let mut target = interval;
        let t0 = Instant::now();
        let mut refreshed_total: usize = 0;
        let mut printed_events = 0usize;
        for step in 0..200_000u64 {
            if state.mesh.is_empty() {
                println!(
                    "extinct at t={:.6} step={step} wall={:.1}s",
                    state.clock,
                    t0.elapsed().as_secs_f64()
                );
                return;
            }
            if state.clock + 1e-9 * interval >= target {
                target += interval;
            }
            let plan = match state.plan_step(target) {
                Ok(p) => p,
                Err(f) => {
                    state.handle_fault(f).unwrap();
                    continue;
                }
            };
            refreshed_total += plan.refresh_set.len();
            let dt = plan.dt;
            state.advance(&plan);
            surgery::surgery_pass(&mut state).unwrap();
            surgery::remove_vanished(&mut state);
            while printed_events < state.events.len() {
                if !matches!(state.events[printed_events], FlowEvent::Merge { .. }) {
                    println!("EVENT step={step} {}", state.events[printed_events]);
                }
                printed_events += 1;
            }
            if step % 500 == 0 {
                let live = state.mesh.live_vertex_count();
                let area = state.mesh.total_area();
                let (mut xmin, mut xmax, mut rho_max) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
                let mut kappas: Vec<f64> = Vec::new();
                for v in state.mesh.live_vertices() {
                    let p = state.mesh.position(v);
                    xmin = xmin.min(p.x);
                    xmax = xmax.max(p.x);
                    rho_max = rho_max.max((p.y * p.y + p.z * p.z).sqrt());
                    kappas.push(state.mesh.vertex(v).curvature_cache);
                }
                kappas.sort_by(f64::total_cmp);
                let q = |f: f64| kappas[((kappas.len() - 1) as f64 * f) as usize];
                println!(
                    "step={step} t={:.5} dt={dt:.3e} live={live} events={} wall={:.0}s | area={area:.4} x=[{xmin:.3},{xmax:.3}] rho_max={rho_max:.3} kappa q10/50/90=({:.2},{:.2},{:.2})",
                    state.clock,
                    state.events.len(),
                    t0.elapsed().as_secs_f64(),
                    q(0.1),
                    q(0.5),
                    q(0.9),
                );
                let _ = refreshed_total;
                refreshed_total = 0;
            }
        }
        println!("hit probe cap at t={:.6}", state.clock);
    }
}
