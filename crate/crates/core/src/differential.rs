//! Per-vertex differential quantities computed from an ordered one-ring.
//!
//! The normal estimate runs two independent branches and keeps whichever has
//! the larger raw magnitude: a triangle-normal average (reliable on smooth
//! regions, cancels on needle-like spikes) and an edge-direction average
//! (reliable on spikes, cancels on smooth regions). Angles weight both sums.
//!
//! Curvature comes from a least-squares quadratic fit of the piecewise-linear
//! surface over the ring triangles. In the frame returned by
//! [`build_local_frame`] the surface is locally a height graph
//! `z = a + d x^2 + 2 e x y + f y^2`; the fit integrates the squared error
//! over each triangle exactly by mapping it to the unit simplex, where the
//! monomial moments are the constant matrices [`moment_a`], [`moment_b`],
//! [`moment_c`]. Mean curvature of the height graph, with the convention
//! that convex regions are positive (sphere: `kappa = +1/r`), is
//! `kappa = -(d + f)` because `z` is measured along the outward normal.

use crate::mesh::OneRing;
use nalgebra::{Matrix2, Matrix4, Matrix4x2, Vector2, Vector3, Vector4};
use thiserror::Error;

/// Condition-estimate threshold above which a fit is reported singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Debug, Error)]
pub enum DifferentialError {
    #[error("both normal-estimate branches vanish on this ring")]
    DegenerateNormal,
    #[error("least-squares fit is singular (condition estimate {condition:.3e})")]
    SingularFit { condition: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalBranch {
    FaceAverage,
    EdgeAverage,
}

#[derive(Debug, Clone)]
pub struct NormalEstimate {
    /// Unit outward normal.
    pub normal: Vector3<f64>,
    pub branch: NormalBranch,
    pub face_magnitude: f64,
    pub edge_magnitude: f64,
}

/// Right-handed orthonormal frame with `z` along the estimated normal.
#[derive(Debug, Clone)]
pub struct LocalFrame {
    pub x: Vector3<f64>,
    pub y: Vector3<f64>,
    pub z: Vector3<f64>,
}

/// Coefficients of the fitted height `z = a + d x^2 + 2 e x y + f y^2`.
#[derive(Debug, Clone, Copy)]
pub struct ShapeCoefficients {
    pub a: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl ShapeCoefficients {
    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.a, self.d, self.e, self.f)
    }

    pub fn from_vector(w: &Vector4<f64>) -> Self {
        ShapeCoefficients {
            a: w[0],
            d: w[1],
            e: w[2],
            f: w[3],
        }
    }
}

/// Normal equations of the integral fit: `m w = rhs`.
#[derive(Debug, Clone)]
pub struct FitSystem {
    pub m: Matrix4<f64>,
    pub rhs: Vector4<f64>,
    /// Squared Cholesky pivot ratio; infinity when factorization fails.
    pub condition_estimate: f64,
}

/// Interior angles `theta_j` between consecutive ring edges, computed as
/// `atan2(|v_j x v_j+1|, v_j . v_j+1)` so obtuse angles come out right.
pub fn ring_angles(ring: &OneRing) -> Vec<f64> {
    let n = ring.rel.len();
    (0..n)
        .map(|j| {
            let a = &ring.rel[j];
            let b = &ring.rel[(j + 1) % n];
            a.cross(b).norm().atan2(a.dot(b))
        })
        .collect()
}

/// Angle-weighted average of the ring's triangle normals (raw, not unit).
pub fn face_normal_average(ring: &OneRing) -> Vector3<f64> {
    let n = ring.rel.len();
    let angles = ring_angles(ring);
    let total: f64 = angles.iter().sum();
    if total == 0.0 {
        return Vector3::zeros();
    }
    let mut sum = Vector3::zeros();
    for j in 0..n {
        let cross = ring.rel[j].cross(&ring.rel[(j + 1) % n]);
        let norm = cross.norm();
        if norm > 0.0 {
            sum += cross * (angles[j] / norm);
        }
    }
    sum / total
}

/// Angle-weighted average of the negated ring edge directions (raw, not
/// unit). Dominates on needle-like formations where face normals cancel.
pub fn edge_direction_average(ring: &OneRing) -> Vector3<f64> {
    let n = ring.rel.len();
    let angles = ring_angles(ring);
    let total: f64 = angles.iter().sum();
    if total == 0.0 {
        return Vector3::zeros();
    }
    let mut sum = Vector3::zeros();
    for j in 0..n {
        let len = ring.rel[j].norm();
        if len > 0.0 {
            let prev = angles[(j + n - 1) % n];
            sum += ring.rel[j] * ((prev + angles[j]) / len);
        }
    }
    -sum / (2.0 * total)
}

/// Two-branch normal estimate; the branch with larger raw magnitude wins,
/// ties go to the face average.
pub fn estimate_normal(ring: &OneRing) -> Result<NormalEstimate, DifferentialError> {
    let face = face_normal_average(ring);
    let edge = edge_direction_average(ring);
    let face_magnitude = face.norm();
    let edge_magnitude = edge.norm();
    let (raw, branch) = if edge_magnitude > face_magnitude {
        (edge, NormalBranch::EdgeAverage)
    } else {
        (face, NormalBranch::FaceAverage)
    };
    let norm = raw.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(DifferentialError::DegenerateNormal);
    }
    Ok(NormalEstimate {
        normal: raw / norm,
        branch,
        face_magnitude,
        edge_magnitude,
    })
}

/// Builds a right-handed orthonormal frame around the unit normal `n`,
/// seeding `x` from the coordinate axis least aligned with `n`.
pub fn build_local_frame(n: &Vector3<f64>) -> LocalFrame {
    let a = n.x.abs();
    let b = n.y.abs();
    let c = n.z.abs();
    let seed = if a <= b && a <= c {
        Vector3::x()
    } else if b <= c {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let x = seed.cross(n).normalize();
    let y = n.cross(&x);
    LocalFrame { x, y, z: *n }
}

/// Neighbor coordinates in the local frame; `w.z` is the height.
pub fn local_coordinates(ring: &OneRing, frame: &LocalFrame) -> Vec<Vector3<f64>> {
    ring.rel
        .iter()
        .map(|v| Vector3::new(v.dot(&frame.x), v.dot(&frame.y), v.dot(&frame.z)))
        .collect()
}

/// Change-of-variables matrix for the monomial vector
/// `s(v) = (1, v_x^2, 2 v_x v_y, v_y^2)': s(X v) = Xi' s(v)` where the ring
/// triangle is mapped from the unit simplex by `X = [p q]`.
pub fn xi_matrix(p: &Vector2<f64>, q: &Vector2<f64>) -> Matrix4<f64> {
    Matrix4::new(
        1.0, 0.0, 0.0, 0.0,
        0.0, p.x * p.x, 2.0 * p.x * p.y, p.y * p.y,
        0.0, p.x * q.x, q.x * p.y + p.x * q.y, p.y * q.y,
        0.0, q.x * q.x, 2.0 * q.x * q.y, q.y * q.y,
    )
}

/// Moments of `s s'` over the unit simplex.
pub fn moment_a() -> Matrix4<f64> {
    Matrix4::new(
        90.0, 15.0, 15.0, 15.0,
        15.0, 6.0, 3.0, 1.0,
        15.0, 3.0, 4.0, 3.0,
        15.0, 1.0, 3.0, 6.0,
    ) / 180.0
}

/// Moments of `s (alpha, beta)` over the unit simplex.
pub fn moment_b() -> Matrix4x2<f64> {
    Matrix4x2::new(
        10.0, 10.0,
        3.0, 1.0,
        2.0, 2.0,
        1.0, 3.0,
    ) / 60.0
}

/// Moments of `(alpha, beta)' (alpha, beta)` over the unit simplex.
pub fn moment_c() -> Matrix2<f64> {
    Matrix2::new(
        2.0, 1.0,
        1.0, 2.0,
    ) / 24.0
}

/// Assembles the normal equations of the integral least-squares fit.
pub fn fit_system(ring: &OneRing, frame: &LocalFrame) -> FitSystem {
    let local = local_coordinates(ring, frame);
    let n = local.len();
    let a = moment_a();
    let b = moment_b();
    let mut m = Matrix4::zeros();
    let mut rhs = Vector4::zeros();
    for j in 0..n {
        let pj = &local[j];
        let qj = &local[(j + 1) % n];
        let p = Vector2::new(pj.x, pj.y);
        let q = Vector2::new(qj.x, qj.y);
        let det = (p.x * q.y - q.x * p.y).abs();
        if det == 0.0 {
            continue;
        }
        let xi = xi_matrix(&p, &q);
        let z = Vector2::new(pj.z, qj.z);
        m += xi.transpose() * a * xi * det;
        rhs += xi.transpose() * (b * z) * det;
    }
    let condition_estimate = match m.cholesky() {
        Some(chol) => {
            let l = chol.l();
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            for k in 0..4 {
                lo = lo.min(l[(k, k)]);
                hi = hi.max(l[(k, k)]);
            }
            if lo > 0.0 {
                (hi / lo).powi(2)
            } else {
                f64::INFINITY
            }
        }
        None => f64::INFINITY,
    };
    FitSystem {
        m,
        rhs,
        condition_estimate,
    }
}

/// Integral squared fitting error of coefficients `w` over the ring
/// triangles (the quantity the fit minimizes).
pub fn fit_energy(ring: &OneRing, frame: &LocalFrame, w: &ShapeCoefficients) -> f64 {
    let local = local_coordinates(ring, frame);
    let n = local.len();
    let a = moment_a();
    let b = moment_b();
    let c = moment_c();
    let wv = w.as_vector();
    let mut energy = 0.0;
    for j in 0..n {
        let pj = &local[j];
        let qj = &local[(j + 1) % n];
        let p = Vector2::new(pj.x, pj.y);
        let q = Vector2::new(qj.x, qj.y);
        let det = (p.x * q.y - q.x * p.y).abs();
        if det == 0.0 {
            continue;
        }
        let xi = xi_matrix(&p, &q);
        let z = Vector2::new(pj.z, qj.z);
        let sw = xi * wv;
        energy += det * ((a * sw).dot(&sw) - 2.0 * (b * z).dot(&sw) + (c * z).dot(&z));
    }
    energy
}

/// Ring rescaled to unit mean edge length. The fit is exactly
/// scale-equivariant (`a -> a/s`, `d,e,f -> s*d,...` under `rel -> rel/s`),
/// so solving in these units keeps the system's condition independent of
/// mesh scale; without it the mixed monomial units make the condition grow
/// like 1/edge^4 and tiny meshes would read as singular.
fn unit_scale_ring(ring: &OneRing) -> Option<(OneRing, f64)> {
    let s = ring.rel.iter().map(|r| r.norm()).sum::<f64>() / ring.rel.len() as f64;
    if !(s > 0.0 && s.is_finite()) {
        return None;
    }
    let scaled = OneRing {
        center: ring.center,
        neighbors: ring.neighbors.clone(),
        rel: ring.rel.iter().map(|r| r / s).collect(),
    };
    Some((scaled, s))
}

impl ShapeCoefficients {
    /// Maps coefficients fitted on a 1/s-scaled ring back to original units.
    fn unscale(&self, s: f64) -> ShapeCoefficients {
        ShapeCoefficients {
            a: self.a * s,
            d: self.d / s,
            e: self.e / s,
            f: self.f / s,
        }
    }
}

/// Least-squares quadratic fit over the ring triangles.
pub fn fit_quadratic(
    ring: &OneRing,
    frame: &LocalFrame,
) -> Result<ShapeCoefficients, DifferentialError> {
    let (scaled, s) = unit_scale_ring(ring).ok_or(DifferentialError::SingularFit {
        condition: f64::INFINITY,
    })?;
    let system = fit_system(&scaled, frame);
    if !(system.condition_estimate < SINGULAR_CONDITION) {
        return Err(DifferentialError::SingularFit {
            condition: system.condition_estimate,
        });
    }
    let chol = system
        .m
        .cholesky()
        .ok_or(DifferentialError::SingularFit {
            condition: system.condition_estimate,
        })?;
    let w = chol.solve(&system.rhs);
    Ok(ShapeCoefficients::from_vector(&w).unscale(s))
}

/// Mean curvature of the fitted height graph, positive on convex regions
/// (sphere of radius r: `+1/r`). The height is measured along the outward
/// normal, so this is `-(h_xx + h_yy)/2 = -(d + f)`.
pub fn mean_curvature(w: &ShapeCoefficients) -> f64 {
    -(w.d + w.f)
}

/// Cotangent-weighted curvature normal over the ring: an independent check
/// on the fitted `kappa * n` direction. On smooth convex regions it points
/// along the outward normal.
pub fn cotan_curvature_normal(ring: &OneRing) -> Vector3<f64> {
    let n = ring.rel.len();
    let cot = |at: &Vector3<f64>, u: &Vector3<f64>, v: &Vector3<f64>| -> f64 {
        let a = u - at;
        let b = v - at;
        let cross = a.cross(&b).norm();
        if cross > 0.0 {
            a.dot(&b) / cross
        } else {
            0.0
        }
    };
    let zero = Vector3::zeros();
    let mut sum = Vector3::zeros();
    for j in 0..n {
        let prev = &ring.rel[(j + n - 1) % n];
        let next = &ring.rel[(j + 1) % n];
        let vj = &ring.rel[j];
        let w = 0.5 * (cot(prev, &zero, vj) + cot(next, &zero, vj));
        sum -= w * vj;
    }
    sum
}

/// Rank and (when unique) minimizer of the vertex-sampled fit, which matches
/// heights only at the neighbors instead of integrating over triangles. Used
/// as a degeneracy diagnostic: symmetric stars can make it rank deficient
/// even where the integral fit is fine.
#[derive(Debug, Clone)]
pub struct VertexFitDiagnostic {
    pub rank: usize,
    pub coefficients: Option<ShapeCoefficients>,
}

fn monomials(x: f64, y: f64) -> Vector4<f64> {
    Vector4::new(1.0, x * x, 2.0 * x * y, y * y)
}

pub fn vertex_fit_diagnostic(ring: &OneRing, frame: &LocalFrame) -> VertexFitDiagnostic {
    let Some((scaled, s)) = unit_scale_ring(ring) else {
        return VertexFitDiagnostic {
            rank: 0,
            coefficients: None,
        };
    };
    let local = local_coordinates(&scaled, frame);
    let mut g = Matrix4::zeros();
    let mut rhs = Vector4::zeros();
    for p in &local {
        let s = monomials(p.x, p.y);
        g += s * s.transpose();
        rhs += s * p.z;
    }
    let eig = g.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
    let rank = eig
        .eigenvalues
        .iter()
        .filter(|&&v| v > 1e-10 * max && max > 0.0)
        .count();
    let coefficients = if rank == 4 {
        let mut w = Vector4::zeros();
        for k in 0..4 {
            let basis = eig.eigenvectors.column(k);
            w += basis * (basis.dot(&rhs) / eig.eigenvalues[k]);
        }
        Some(ShapeCoefficients::from_vector(&w).unscale(s))
    } else {
        None
    };
    VertexFitDiagnostic { rank, coefficients }
}

/// Residual of the vertex-sampled fit for given coefficients.
pub fn vertex_fit_energy(ring: &OneRing, frame: &LocalFrame, w: &ShapeCoefficients) -> f64 {
    let local = local_coordinates(ring, frame);
    local
        .iter()
        .map(|p| {
            let r = monomials(p.x, p.y).dot(&w.as_vector()) - p.z;
            r * r
        })
        .sum()
}
