//! Mean curvature flow of closed triangle meshes, with the evolving
//! surface's Laplacian spectrum rendered as sound.
//!
//! The pipeline has four stages, one module each:
//!
//! * [`mesh`] - indexed triangle meshes: loading (STL/OBJ), welding,
//!   orientation repair, one-ring queries, validation, OBJ export.
//! * [`differential`] - per-vertex normal estimation and a least-squares
//!   quadratic fit over the one-ring that yields mean curvature.
//! * [`flow`] - explicit mean curvature flow `dx/dt = -kappa * n` with
//!   per-vertex cache staleness scheduling, merge surgery for degenerate
//!   triangles, pinch-off topology resolution, and vanishing components.
//! * [`spectrum`] - the cotangent Laplacian of a snapshot and its smallest
//!   eigenpairs via shift-invert Lanczos.
//! * [`sound`] - a plucked wave equation evolved quasi-statically across
//!   snapshots, piecewise-linear wavetracks, waveform synthesis, WAV output.
//!
//! Conventions used throughout:
//!
//! * Triangles are counter-clockwise when viewed from outside; vertex
//!   one-rings are reported in the same sense.
//! * Mean curvature is positive on convex regions (a sphere of radius `r`
//!   has `kappa = 1/r`), so the flow shrinks convex surfaces.
//! * All computations are deterministic for a fixed input and seed:
//!   iteration orders are index-based, never hash-map order.

pub mod differential;
pub mod flow;
pub mod mesh;
pub mod sound;
pub mod spectrum;
