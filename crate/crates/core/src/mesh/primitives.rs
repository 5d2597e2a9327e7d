//! Synthetic closed meshes used by tests, the acceptance suite, and `gen`.

use super::SurfaceMesh;
use nalgebra::Vector3;
use std::collections::BTreeMap;

/// Regular tetrahedron with circumradius `r`, centered at the origin.
pub fn tetrahedron(r: f64) -> SurfaceMesh {
    let s = r / 3.0f64.sqrt();
    let positions = vec![
        Vector3::new(s, s, s),
        Vector3::new(s, -s, -s),
        Vector3::new(-s, s, -s),
        Vector3::new(-s, -s, s),
    ];
    let tris = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
    SurfaceMesh::from_indexed(positions, tris).expect("tetrahedron is closed")
}

/// Icosphere: an icosahedron subdivided `subdivisions` times, vertices
/// projected onto the sphere of radius `r`.
pub fn icosphere(subdivisions: u32, r: f64) -> SurfaceMesh {
    let t = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut positions: Vec<Vector3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize() * r)
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let mut mid = |i: u32, j: u32, positions: &mut Vec<Vector3<f64>>| -> u32 {
                let key = (i.min(j), i.max(j));
                *midpoint.entry(key).or_insert_with(|| {
                    let p = ((positions[i as usize] + positions[j as usize]) / 2.0)
                        .normalize()
                        * r;
                    positions.push(p);
                    positions.len() as u32 - 1
                })
            };
            let ab = mid(a, b, &mut positions);
            let bc = mid(b, c, &mut positions);
            let ca = mid(c, a, &mut positions);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    SurfaceMesh::from_indexed(positions, faces).expect("icosphere is closed")
}

/// Two spheres joined by a thin neck, as a surface of revolution around z.
///
/// The left sphere (radius `r_left`) sits at negative z, the right one at
/// positive z. Spherical caps meet C1 neck blends (Hermite cubics) at the
/// junction angle `junction` (radians from the axis); the waist has radius
/// `neck_radius` at z = 0 and each blend spans `neck_half_length` in z.
/// `target_edge` controls mesh resolution.
///
/// With the defaults used by callers (junction ~ 0.7, half length ~ 0.7 per
/// unit sphere radius) the waist's circumferential curvature dominates the
/// axial saddle term, so the neck shrinks under mean curvature flow.
pub fn dumbbell(
    r_left: f64,
    r_right: f64,
    neck_radius: f64,
    neck_half_length: f64,
    junction: f64,
    target_edge: f64,
) -> SurfaceMesh {
    assert!(neck_radius > 0.0 && neck_radius < r_left.min(r_right));
    let (sin_j, cos_j) = junction.sin_cos();
    let slope = cos_j / sin_j;
    let l = neck_half_length;
    // Sphere centers put the junction circles at z = -l and z = +l.
    let c_left = -l - r_left * cos_j;
    let c_right = l + r_right * cos_j;
    let rho_left = r_left * sin_j;
    let rho_right = r_right * sin_j;

    // Hermite cubic on [0, 1]: value/slope rho_n/0 at the waist, rho_j/m at
    // the junction.
    let blend = |s: f64, rho_j: f64, m: f64| -> f64 {
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        neck_radius + (rho_j - neck_radius) * h01 + m * l * h11
    };

    // Stations along the profile from the left pole to the right pole.
    let mut stations: Vec<(f64, f64)> = Vec::new(); // (z, rho)
    let cap_steps = |r: f64| ((std::f64::consts::PI - junction) * r / target_edge).ceil() as usize;
    let n_left = cap_steps(r_left).max(4);
    for i in 0..=n_left {
        // Polar angle from the outer (negative z) pole down to the junction.
        let a = std::f64::consts::PI - (std::f64::consts::PI - junction) * i as f64 / n_left as f64;
        stations.push((c_left + r_left * a.cos(), r_left * a.sin()));
    }
    let n_neck = ((2.0 * l) / target_edge).ceil() as usize;
    let n_neck = n_neck.max(6);
    for i in 1..n_neck {
        let z = -l + 2.0 * l * i as f64 / n_neck as f64;
        let rho = if z <= 0.0 {
            blend(-z / l, rho_left, slope)
        } else {
            blend(z / l, rho_right, slope)
        };
        stations.push((z, rho));
    }
    let n_right = cap_steps(r_right).max(4);
    for i in 0..=n_right {
        let a = junction + (std::f64::consts::PI - junction) * i as f64 / n_right as f64;
        // Sweep from the junction up to the outer (positive z) pole.
        stations.push((c_right + r_right * (std::f64::consts::PI - a).cos(), r_right * a.sin()));
    }

    // First and last stations are the poles (rho = 0); interior stations
    // become rings sized to keep azimuthal edges near `target_edge`, so
    // near-pole rings stay coarse instead of collecting needle triangles.
    let mut positions = Vec::new();
    positions.push(Vector3::new(0.0, 0.0, stations[0].0));
    let mut ring_start: Vec<u32> = Vec::new();
    let mut ring_count: Vec<usize> = Vec::new();
    for s in &stations[1..stations.len() - 1] {
        let n = ((2.0 * std::f64::consts::PI * s.1 / target_edge).ceil() as usize).max(6);
        ring_start.push(positions.len() as u32);
        ring_count.push(n);
        for k in 0..n {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            positions.push(Vector3::new(s.1 * phi.cos(), s.1 * phi.sin(), s.0));
        }
    }
    positions.push(Vector3::new(0.0, 0.0, stations[stations.len() - 1].0));
    let last = positions.len() as u32 - 1;
    let n_rings = ring_count.len();

    let mut tris: Vec<[u32; 3]> = Vec::new();
    for k in 0..ring_count[0] {
        let next = (k + 1) % ring_count[0];
        tris.push([0, ring_start[0] + k as u32, ring_start[0] + next as u32]);
    }
    // Bridge adjacent rings by always advancing the side whose phase lags,
    // which keeps the band watertight for unequal ring sizes.
    for i in 0..n_rings - 1 {
        let (na, nb) = (ring_count[i], ring_count[i + 1]);
        let a = |k: usize| ring_start[i] + (k % na) as u32;
        let b = |k: usize| ring_start[i + 1] + (k % nb) as u32;
        let (mut ia, mut ib) = (0usize, 0usize);
        while ia < na || ib < nb {
            let advance_a =
                ib >= nb || (ia < na && (ia + 1) * nb <= (ib + 1) * na);
            if advance_a {
                tris.push([a(ia), b(ib), a(ia + 1)]);
                ia += 1;
            } else {
                tris.push([a(ia), b(ib), b(ib + 1)]);
                ib += 1;
            }
        }
    }
    for k in 0..ring_count[n_rings - 1] {
        let next = (k + 1) % ring_count[n_rings - 1];
        tris.push([
            last,
            ring_start[n_rings - 1] + next as u32,
            ring_start[n_rings - 1] + k as u32,
        ]);
    }
    SurfaceMesh::from_indexed(positions, tris).expect("dumbbell is closed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts_follow_subdivision() {
        for (level, verts, faces) in [(0u32, 12, 20), (1, 42, 80), (2, 162, 320), (3, 642, 1280)] {
            let mesh = icosphere(level, 2.0);
            assert_eq!(mesh.live_vertex_count(), verts);
            assert_eq!(mesh.live_tri_count(), faces);
            for v in mesh.live_vertices() {
                assert!((mesh.position(v).norm() - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dumbbell_is_closed_with_expected_waist() {
        let mesh = dumbbell(1.0, 1.0, 0.15, 0.7, 0.7, 0.12);
        mesh.validate_closed().unwrap();
        assert!(mesh.signed_volume() > 0.0);
        // Poles sit at rho = 0; the waist is the thinnest ring of the neck.
        let waist = mesh
            .live_vertices()
            .map(|v| mesh.position(v))
            .filter(|p| p.z.abs() < 0.7)
            .map(|p| (p.x * p.x + p.y * p.y).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!((waist - 0.15).abs() < 0.02, "waist {waist}");
        assert_eq!(mesh.connected_components().len(), 1);
    }

    #[test]
    fn asymmetric_dumbbell_is_closed() {
        let mesh = dumbbell(0.6, 0.45, 0.09, 0.42, 0.7, 0.09);
        mesh.validate_closed().unwrap();
        assert!(mesh.signed_volume() > 0.0);
    }
}
