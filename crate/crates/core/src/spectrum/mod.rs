//! Discrete Laplace-Beltrami spectra of triangle meshes.
//!
//! The operator is the cotangent stiffness matrix: for an interior edge
//! `(i, j)` with opposite corners `alpha` and `beta`,
//! `w_ij = (cot alpha + cot beta) / 2`, `a_ij = -w_ij`, and
//! `a_ii = sum_j w_ij`. Rows sum to zero, the matrix is symmetric positive
//! semidefinite on closed meshes, and the nullity equals the number of
//! connected components. No mass matrix is applied, so the spectrum is
//! invariant under rigid motions and uniform scaling.
//!
//! Eigenpairs come from shift-invert Lanczos with full reorthogonalization
//! (see [`lanczos`]); [`dense_spectrum`] is the direct reference path used to
//! cross-check small systems.

mod lanczos;

pub use lanczos::smallest_eigenpairs;

use nalgebra::{DMatrix, Vector3};
use sprs::{CsMat, TriMat};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("triangle {tri} has zero area, cotangent weights are undefined")]
    ZeroAreaTriangle { tri: usize },
    #[error("triangle {tri} references vertex {vertex} out of range ({count} vertices)")]
    IndexOutOfRange { tri: usize, vertex: u32, count: usize },
    #[error("factorization of the shifted stiffness matrix failed: {0}")]
    Factorization(String),
    #[error("matrix is empty")]
    Empty,
}

/// Eigenpairs sorted by ascending eigenvalue. Column `i` of `eigenvectors`
/// is the unit eigenvector of `eigenvalues[i]`; `residuals[i]` is
/// `|A v - lambda v|_2` measured against the original matrix.
#[derive(Debug, Clone)]
pub struct EigenPairSet {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub residuals: Vec<f64>,
}

/// Assembles the cotangent stiffness matrix of a triangle mesh.
pub fn assemble_stiffness(
    positions: &[Vector3<f64>],
    tris: &[[u32; 3]],
) -> Result<CsMat<f64>, SpectrumError> {
    let n = positions.len();
    if n == 0 {
        return Err(SpectrumError::Empty);
    }
    let mut triplets = TriMat::new((n, n));
    for (t, tri) in tris.iter().enumerate() {
        for &v in tri {
            if v as usize >= n {
                return Err(SpectrumError::IndexOutOfRange {
                    tri: t,
                    vertex: v,
                    count: n,
                });
            }
        }
        for c in 0..3 {
            let i = tri[c] as usize;
            let j = tri[(c + 1) % 3] as usize;
            let k = tri[(c + 2) % 3] as usize;
            let u = positions[j] - positions[i];
            let v = positions[k] - positions[i];
            let cross = u.cross(&v).norm();
            if !(cross > 0.0) {
                return Err(SpectrumError::ZeroAreaTriangle { tri: t });
            }
            // Half the cotangent at corner i, applied to opposite edge (j, k).
            let w = 0.5 * u.dot(&v) / cross;
            triplets.add_triplet(j, k, -w);
            triplets.add_triplet(k, j, -w);
            triplets.add_triplet(j, j, w);
            triplets.add_triplet(k, k, w);
        }
    }
    Ok(triplets.to_csr())
}

/// Number of numerically zero eigenvalues, using a tolerance relative to the
/// largest computed eigenvalue: `lambda < 1e-8 * lambda_max`.
pub fn zero_mode_count(eigenvalues: &[f64]) -> usize {
    let lam_max = eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
    if lam_max <= 0.0 {
        return eigenvalues.len();
    }
    eigenvalues.iter().filter(|&&v| v < 1e-8 * lam_max).count()
}

/// Direct dense eigendecomposition, ascending. Reference path for
/// cross-checking the iterative solver on small systems.
pub fn dense_spectrum(matrix: &CsMat<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = matrix.rows();
    let mut dense = DMatrix::zeros(n, n);
    for (value, (i, j)) in matrix.iter() {
        dense[(i, j)] += *value;
    }
    let eig = dense.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| f64::total_cmp(&eig.eigenvalues[a], &eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{icosphere, tetrahedron};
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, Vector3};

    fn mesh_arrays(mesh: &crate::mesh::SurfaceMesh) -> (Vec<Vector3<f64>>, Vec<[u32; 3]>) {
        let compact = mesh.compact();
        (compact.positions, compact.tris)
    }

    #[test]
    fn regular_tetrahedron_spectrum_is_exact() {
        // All corner angles are 60 degrees, so every edge weight is
        // 1/sqrt(3) and the matrix is (sqrt(3) + 1/sqrt(3)) I - J/sqrt(3).
        // Eigenvalues: 0 once, 4/sqrt(3) three times.
        let mesh = tetrahedron(1.0);
        let (pos, tris) = mesh_arrays(&mesh);
        let a = assemble_stiffness(&pos, &tris).unwrap();
        let s3 = 3.0f64.sqrt();
        assert_relative_eq!(*a.get(0, 0).unwrap(), s3, epsilon = 1e-12);
        assert_relative_eq!(*a.get(0, 1).unwrap(), -1.0 / s3, epsilon = 1e-12);
        let (dense_vals, _) = dense_spectrum(&a);
        let expect = [0.0, 4.0 / s3, 4.0 / s3, 4.0 / s3];
        for (got, want) in dense_vals.iter().zip(expect) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
        let pairs = smallest_eigenpairs(&a, 4, 7).unwrap();
        for (got, want) in pairs.eigenvalues.iter().zip(expect) {
            assert_relative_eq!(*got, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn obtuse_corners_produce_negative_weights() {
        // Two triangles meeting at a shared edge, both with a 120 degree
        // angle opposite it: w = cot(120) = -1/sqrt(3), so the off-diagonal
        // entry -w is positive.
        let h = 3.0f64.sqrt() / 2.0;
        let pos = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.5, h, 0.0),
            Vector3::new(0.5, -h, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
        ];
        let tris = vec![[0, 1, 2], [3, 2, 1]];
        let a = assemble_stiffness(&pos, &tris).unwrap();
        assert_relative_eq!(*a.get(1, 2).unwrap(), 1.0 / 3.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn rows_sum_to_zero() {
        let mesh = icosphere(1, 1.0);
        let (pos, tris) = mesh_arrays(&mesh);
        let a = assemble_stiffness(&pos, &tris).unwrap();
        let n = a.rows();
        let ones = vec![1.0; n];
        let mut out = vec![0.0; n];
        sprs::prod::mul_acc_mat_vec_csr(a.view(), &ones[..], &mut out);
        for r in out {
            assert!(r.abs() < 1e-10, "row sum {r} too large");
        }
    }

    #[test]
    fn zero_area_triangle_is_rejected() {
        let pos = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
        ];
        let tris = vec![[0, 1, 2]];
        match assemble_stiffness(&pos, &tris) {
            Err(SpectrumError::ZeroAreaTriangle { tri: 0 }) => {}
            other => panic!("expected zero-area error, got {other:?}"),
        }
    }

    #[test]
    fn spectrum_is_invariant_under_rigid_motion_and_scale() {
        let mesh = icosphere(1, 1.0);
        let (pos, tris) = mesh_arrays(&mesh);
        let base = {
            let a = assemble_stiffness(&pos, &tris).unwrap();
            smallest_eigenpairs(&a, 8, 11).unwrap().eigenvalues
        };
        let rot = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let shift = Vector3::new(5.0, -2.0, 0.7);
        let moved: Vec<Vector3<f64>> = pos.iter().map(|p| rot * p + shift).collect();
        let scaled: Vec<Vector3<f64>> = pos.iter().map(|p| p * 2.0).collect();
        for other in [moved, scaled] {
            let a = assemble_stiffness(&other, &tris).unwrap();
            let vals = smallest_eigenpairs(&a, 8, 11).unwrap().eigenvalues;
            for (x, y) in base.iter().zip(&vals) {
                assert_relative_eq!(x, y, epsilon = 1e-9, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn nullity_counts_connected_components() {
        let a_mesh = tetrahedron(1.0);
        let (mut pos, mut tris) = mesh_arrays(&a_mesh);
        let offset = pos.len() as u32;
        let b_mesh = tetrahedron(0.5);
        let (b_pos, b_tris) = mesh_arrays(&b_mesh);
        pos.extend(b_pos.iter().map(|p| p + Vector3::new(10.0, 0.0, 0.0)));
        tris.extend(b_tris.iter().map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]));
        let a = assemble_stiffness(&pos, &tris).unwrap();
        let pairs = smallest_eigenpairs(&a, 5, 3).unwrap();
        assert_eq!(zero_mode_count(&pairs.eigenvalues), 2);
    }

    #[test]
    fn solver_meets_residual_and_orthonormality_contract() {
        let mesh = icosphere(2, 1.0);
        let (pos, tris) = mesh_arrays(&mesh);
        let a = assemble_stiffness(&pos, &tris).unwrap();
        let pairs = smallest_eigenpairs(&a, 10, 42).unwrap();
        assert!(pairs.eigenvalues[0] >= -1e-10);
        for i in 0..10 {
            assert!(
                pairs.residuals[i] <= 1e-8 * (1.0 + pairs.eigenvalues[i].abs()),
                "residual {} too large for eigenvalue {}",
                pairs.residuals[i],
                pairs.eigenvalues[i]
            );
            for j in 0..=i {
                let dot = pairs.eigenvectors.column(i).dot(&pairs.eigenvectors.column(j));
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-8);
            }
        }
        for w in pairs.eigenvalues.windows(2) {
            assert!(w[0] <= w[1] + 1e-12);
        }
    }

    #[test]
    fn sphere_spectrum_shows_spherical_harmonic_clusters() {
        let mesh = icosphere(2, 1.0);
        let (pos, tris) = mesh_arrays(&mesh);
        let a = assemble_stiffness(&pos, &tris).unwrap();
        let pairs = smallest_eigenpairs(&a, 9, 5).unwrap();
        assert_eq!(zero_mode_count(&pairs.eigenvalues), 1);
        for cluster in [&pairs.eigenvalues[1..4], &pairs.eigenvalues[4..9]] {
            let mean: f64 = cluster.iter().sum::<f64>() / cluster.len() as f64;
            for v in cluster {
                assert!(
                    (v - mean).abs() <= 0.05 * mean,
                    "cluster member {v} strays from mean {mean}"
                );
            }
        }
    }

    #[test]
    fn iterative_matches_dense_on_small_system() {
        let mesh = icosphere(1, 1.0);
        let (pos, tris) = mesh_arrays(&mesh);
        let a = assemble_stiffness(&pos, &tris).unwrap();
        let (dense_vals, _) = dense_spectrum(&a);
        let pairs = smallest_eigenpairs(&a, 12, 9).unwrap();
        for (got, want) in pairs.eigenvalues.iter().zip(&dense_vals) {
            assert_relative_eq!(got, want, epsilon = 1e-9, max_relative = 1e-8);
        }
    }
}
