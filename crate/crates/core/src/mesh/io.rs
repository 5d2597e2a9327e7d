//! Mesh file formats: binary/ASCII STL and a v/f subset of OBJ.
//!
//! STL files are triangle soup; loading welds vertices that coincide within
//! 1e-9 of the bounding-box diagonal, then repairs orientation and validates
//! closedness. Stored STL normals are ignored and recomputed from winding.
//!
//! OBJ export writes 9 significant digits and is byte-stable: identical
//! meshes always serialize to identical bytes.

use super::{MeshError, SurfaceMesh};
use nalgebra::Vector3;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const WELD_TOLERANCE_FRACTION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    StlBinary,
    StlAscii,
    Obj,
}

impl MeshFormat {
    /// Guesses a format from the file extension plus, for `.stl`, a sniff of
    /// the leading bytes (binary files rarely start with "solid").
    pub fn guess(path: &Path, head: &[u8]) -> MeshFormat {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("obj") => MeshFormat::Obj,
            _ => {
                if head.starts_with(b"solid") {
                    MeshFormat::StlAscii
                } else {
                    MeshFormat::StlBinary
                }
            }
        }
    }
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<SurfaceMesh, MeshError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    load_mesh_bytes(&bytes, format)
}

pub fn load_mesh_bytes(bytes: &[u8], format: MeshFormat) -> Result<SurfaceMesh, MeshError> {
    let (positions, tris) = load_indexed_bytes(bytes, format)?;
    SurfaceMesh::from_indexed(positions, tris)
}

/// Parses (and for STL, welds) a mesh file into raw indexed geometry without
/// any closedness or orientation checks: the entry point for diagnosing
/// meshes that may not be valid closed manifolds.
pub fn load_indexed_bytes(
    bytes: &[u8],
    format: MeshFormat,
) -> Result<(Vec<Vector3<f64>>, Vec<[u32; 3]>), MeshError> {
    Ok(match format {
        MeshFormat::StlBinary => weld(&parse_stl_binary(bytes)?),
        MeshFormat::StlAscii => weld(&parse_stl_ascii(bytes)?),
        MeshFormat::Obj => parse_obj(bytes)?,
    })
}

type Facet = [[f64; 3]; 3];

fn parse_stl_binary(bytes: &[u8]) -> Result<Vec<Facet>, MeshError> {
    if bytes.len() < 84 {
        return Err(MeshError::Parse {
            location: "header".into(),
            message: format!("binary STL needs at least 84 bytes, got {}", bytes.len()),
        });
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let expected = 84 + count * 50;
    if bytes.len() < expected {
        return Err(MeshError::Parse {
            location: "header".into(),
            message: format!(
                "binary STL declares {count} facets ({expected} bytes) but file has {}",
                bytes.len()
            ),
        });
    }
    let mut facets = Vec::with_capacity(count);
    for i in 0..count {
        let rec = &bytes[84 + i * 50..84 + i * 50 + 50];
        let mut facet = [[0.0f64; 3]; 3];
        for (v, corner) in facet.iter_mut().enumerate() {
            for (k, coord) in corner.iter_mut().enumerate() {
                // Skip the 12-byte stored normal; vertices start at offset 12.
                let off = 12 + v * 12 + k * 4;
                let raw = f32::from_le_bytes(rec[off..off + 4].try_into().unwrap());
                if !raw.is_finite() {
                    return Err(MeshError::Parse {
                        location: format!("facet {i}"),
                        message: "non-finite vertex coordinate".into(),
                    });
                }
                *coord = raw as f64;
            }
        }
        facets.push(facet);
    }
    Ok(facets)
}

fn parse_stl_ascii(bytes: &[u8]) -> Result<Vec<Facet>, MeshError> {
    let mut facets = Vec::new();
    let mut corners: Vec<[f64; 3]> = Vec::with_capacity(3);
    for (lineno, line) in BufReader::new(bytes).lines().enumerate() {
        let line = line?;
        let mut words = line.split_whitespace();
        if words.next() != Some("vertex") {
            continue;
        }
        let mut corner = [0.0f64; 3];
        for coord in corner.iter_mut() {
            let word = words.next().ok_or_else(|| MeshError::Parse {
                location: format!("line {}", lineno + 1),
                message: "vertex needs three coordinates".into(),
            })?;
            *coord = word.parse().map_err(|_| MeshError::Parse {
                location: format!("line {}", lineno + 1),
                message: format!("bad coordinate {word:?}"),
            })?;
        }
        corners.push(corner);
        if corners.len() == 3 {
            facets.push([corners[0], corners[1], corners[2]]);
            corners.clear();
        }
    }
    if !corners.is_empty() {
        return Err(MeshError::Parse {
            location: "end of file".into(),
            message: format!("dangling facet with {} vertices", corners.len()),
        });
    }
    Ok(facets)
}

fn parse_obj(bytes: &[u8]) -> Result<(Vec<Vector3<f64>>, Vec<[u32; 3]>), MeshError> {
    let mut positions: Vec<Vector3<f64>> = Vec::new();
    let mut tris: Vec<[u32; 3]> = Vec::new();
    for (lineno, line) in BufReader::new(bytes).lines().enumerate() {
        let line = line?;
        let at = || format!("line {}", lineno + 1);
        let mut words = line.split_whitespace();
        match words.next() {
            Some("v") => {
                let mut p = [0.0f64; 3];
                for coord in p.iter_mut() {
                    let word = words.next().ok_or_else(|| MeshError::Parse {
                        location: at(),
                        message: "v needs three coordinates".into(),
                    })?;
                    *coord = word.parse().map_err(|_| MeshError::Parse {
                        location: at(),
                        message: format!("bad coordinate {word:?}"),
                    })?;
                }
                positions.push(Vector3::new(p[0], p[1], p[2]));
            }
            Some("f") => {
                let mut idx = Vec::with_capacity(3);
                for word in words {
                    // Accept i, i/t, i//n, i/t/n; only the vertex index is used.
                    let first = word.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| MeshError::Parse {
                        location: at(),
                        message: format!("bad face index {word:?}"),
                    })?;
                    if i < 1 || i as usize > positions.len() {
                        return Err(MeshError::Parse {
                            location: at(),
                            message: format!("face index {i} out of range"),
                        });
                    }
                    idx.push((i - 1) as u32);
                }
                if idx.len() != 3 {
                    return Err(MeshError::Parse {
                        location: at(),
                        message: format!("only triangles are supported, face has {} vertices", idx.len()),
                    });
                }
                tris.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    Ok((positions, tris))
}

/// Merges soup vertices that coincide within 1e-9 of the bounding-box
/// diagonal. Vertex ids are assigned in first-occurrence order, so the result
/// is deterministic. Facets left with a repeated vertex are dropped.
fn weld(facets: &[Facet]) -> (Vec<Vector3<f64>>, Vec<[u32; 3]>) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for facet in facets {
        for corner in facet {
            for k in 0..3 {
                lo[k] = lo[k].min(corner[k]);
                hi[k] = hi[k].max(corner[k]);
            }
        }
    }
    let diag = (0..3)
        .map(|k| (hi[k] - lo[k]).powi(2))
        .sum::<f64>()
        .sqrt();
    let tol = (WELD_TOLERANCE_FRACTION * diag).max(f64::MIN_POSITIVE);
    let cell = tol.max(1e-300);

    let mut grid: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    let mut positions: Vec<Vector3<f64>> = Vec::new();
    let mut tris: Vec<[u32; 3]> = Vec::new();
    let mut canonical = |p: [f64; 3]| -> u32 {
        let base = [
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        ];
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let key = [base[0] + dx, base[1] + dy, base[2] + dz];
                    if let Some(ids) = grid.get(&key) {
                        for &id in ids {
                            let q = positions[id as usize];
                            if (q.x - p[0]).abs() <= tol
                                && (q.y - p[1]).abs() <= tol
                                && (q.z - p[2]).abs() <= tol
                            {
                                return id;
                            }
                        }
                    }
                }
            }
        }
        let id = positions.len() as u32;
        positions.push(Vector3::new(p[0], p[1], p[2]));
        grid.entry(base).or_default().push(id);
        id
    };
    for facet in facets {
        let a = canonical(facet[0]);
        let b = canonical(facet[1]);
        let c = canonical(facet[2]);
        if a != b && b != c && a != c {
            tris.push([a, b, c]);
        }
    }
    (positions, tris)
}

/// Rounds a coordinate through the OBJ text format, so that meshes kept in
/// memory agree bit-for-bit with meshes re-read from disk.
pub fn obj_quantize(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Writes an OBJ with 9-significant-digit vertices and 1-based faces.
pub fn write_obj<W: Write>(
    w: &mut W,
    positions: &[Vector3<f64>],
    tris: &[[u32; 3]],
) -> std::io::Result<()> {
    for p in positions {
        writeln!(w, "v {:.8e} {:.8e} {:.8e}", p.x, p.y, p.z)?;
    }
    for t in tris {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

pub fn save_obj(path: &Path, positions: &[Vector3<f64>], tris: &[[u32; 3]]) -> std::io::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_obj(&mut w, positions, tris)?;
    w.flush()
}

/// Parent-map sidecar for a snapshot: one `child_index parent_index` line per
/// vertex, indices 0-based into the snapshot's / previous snapshot's OBJ
/// vertex order.
pub fn write_parent_map<W: Write>(w: &mut W, parents: &[u32]) -> std::io::Result<()> {
    for (child, &parent) in parents.iter().enumerate() {
        writeln!(w, "{child} {parent}")?;
    }
    Ok(())
}

pub fn read_parent_map(path: &Path) -> Result<Vec<u32>, MeshError> {
    let mut parents = Vec::new();
    for (lineno, line) in BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut words = line.split_whitespace();
        let err = |message: String| MeshError::Parse {
            location: format!("line {}", lineno + 1),
            message,
        };
        let child: usize = words
            .next()
            .and_then(|w| w.parse().ok())
            .ok_or_else(|| err("missing child index".into()))?;
        let parent: u32 = words
            .next()
            .and_then(|w| w.parse().ok())
            .ok_or_else(|| err("missing parent index".into()))?;
        if child != parents.len() {
            return Err(err(format!(
                "child indices must be consecutive, expected {} got {child}",
                parents.len()
            )));
        }
        parents.push(parent);
    }
    Ok(parents)
}

/// Writes binary STL with recomputed facet normals (used by `gen` and tests).
pub fn write_stl_binary<W: Write>(
    w: &mut W,
    positions: &[Vector3<f64>],
    tris: &[[u32; 3]],
) -> std::io::Result<()> {
    let mut header = [0u8; 80];
    let tag = b"generated triangle mesh";
    header[..tag.len()].copy_from_slice(tag);
    w.write_all(&header)?;
    w.write_all(&(tris.len() as u32).to_le_bytes())?;
    for t in tris {
        let (a, b, c) = (
            positions[t[0] as usize],
            positions[t[1] as usize],
            positions[t[2] as usize],
        );
        let n = (b - a).cross(&(c - a));
        let n = if n.norm() > 0.0 { n.normalize() } else { n };
        for v in [n, a, b, c] {
            for k in 0..3 {
                w.write_all(&(v[k] as f32).to_le_bytes())?;
            }
        }
        w.write_all(&0u16.to_le_bytes())?;
    }
    Ok(())
}

/// Writes ASCII STL (used by tests to exercise the ASCII parser).
pub fn write_stl_ascii<W: Write>(
    w: &mut W,
    positions: &[Vector3<f64>],
    tris: &[[u32; 3]],
) -> std::io::Result<()> {
    writeln!(w, "solid mesh")?;
    for t in tris {
        let (a, b, c) = (
            positions[t[0] as usize],
            positions[t[1] as usize],
            positions[t[2] as usize],
        );
        let n = (b - a).cross(&(c - a));
        let n = if n.norm() > 0.0 { n.normalize() } else { n };
        writeln!(w, "  facet normal {:e} {:e} {:e}", n.x, n.y, n.z)?;
        writeln!(w, "    outer loop")?;
        for p in [a, b, c] {
            writeln!(w, "      vertex {:e} {:e} {:e}", p.x, p.y, p.z)?;
        }
        writeln!(w, "    endloop")?;
        writeln!(w, "  endfacet")?;
    }
    writeln!(w, "endsolid mesh")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{icosphere, tetrahedron};

    fn mesh_arrays(mesh: &SurfaceMesh) -> (Vec<Vector3<f64>>, Vec<[u32; 3]>) {
        let compact = mesh.compact();
        (compact.positions, compact.tris)
    }

    #[test]
    fn binary_stl_round_trips_through_weld() {
        let mesh = icosphere(2, 1.0);
        let (positions, tris) = mesh_arrays(&mesh);
        let mut bytes = Vec::new();
        write_stl_binary(&mut bytes, &positions, &tris).unwrap();
        assert_eq!(bytes.len(), 84 + 50 * tris.len());
        let loaded = load_mesh_bytes(&bytes, MeshFormat::StlBinary).unwrap();
        assert_eq!(loaded.live_vertex_count(), mesh.live_vertex_count());
        assert_eq!(loaded.live_tri_count(), mesh.live_tri_count());
        loaded.validate_closed().unwrap();
        assert!(loaded.signed_volume() > 0.0);
    }

    #[test]
    fn ascii_stl_round_trips_through_weld() {
        let mesh = tetrahedron(1.0);
        let (positions, tris) = mesh_arrays(&mesh);
        let mut bytes = Vec::new();
        write_stl_ascii(&mut bytes, &positions, &tris).unwrap();
        let loaded = load_mesh_bytes(&bytes, MeshFormat::StlAscii).unwrap();
        assert_eq!(loaded.live_vertex_count(), 4);
        assert_eq!(loaded.live_tri_count(), 4);
        loaded.validate_closed().unwrap();
    }

    #[test]
    fn obj_export_is_byte_stable_and_reloads() {
        let mesh = icosphere(1, 0.5);
        let (positions, tris) = mesh_arrays(&mesh);
        let mut first = Vec::new();
        write_obj(&mut first, &positions, &tris).unwrap();
        let mut second = Vec::new();
        write_obj(&mut second, &positions, &tris).unwrap();
        assert_eq!(first, second);
        let loaded = load_mesh_bytes(&first, MeshFormat::Obj).unwrap();
        assert_eq!(loaded.live_vertex_count(), mesh.live_vertex_count());
        // 9 significant digits: positions round-trip to 1e-8 of the scale.
        for v in loaded.live_vertices() {
            let p = loaded.position(v);
            let q = positions[v as usize];
            assert!((p - q).norm() < 1e-8);
        }
    }

    #[test]
    fn truncated_binary_stl_is_rejected() {
        let mesh = tetrahedron(1.0);
        let (positions, tris) = mesh_arrays(&mesh);
        let mut bytes = Vec::new();
        write_stl_binary(&mut bytes, &positions, &tris).unwrap();
        bytes.truncate(bytes.len() - 10);
        match load_mesh_bytes(&bytes, MeshFormat::StlBinary) {
            Err(MeshError::Parse { .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_stl_is_rejected() {
        let mut bytes = Vec::new();
        write_stl_binary(&mut bytes, &[], &[]).unwrap();
        match load_mesh_bytes(&bytes, MeshFormat::StlBinary) {
            Err(MeshError::Empty) => {}
            other => panic!("expected empty error, got {other:?}"),
        }
    }

    #[test]
    fn parent_map_round_trips() {
        let parents = vec![0u32, 0, 2, 1];
        let mut bytes = Vec::new();
        write_parent_map(&mut bytes, &parents).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame_000001.parents.txt");
        std::fs::write(&path, &bytes).unwrap();
        assert_eq!(read_parent_map(&path).unwrap(), parents);
    }

    #[test]
    fn format_guessing_prefers_extension_then_sniff() {
        assert_eq!(
            MeshFormat::guess(Path::new("a.obj"), b"whatever"),
            MeshFormat::Obj
        );
        assert_eq!(
            MeshFormat::guess(Path::new("a.stl"), b"solid thing"),
            MeshFormat::StlAscii
        );
        assert_eq!(
            MeshFormat::guess(Path::new("a.stl"), &[0u8; 8]),
            MeshFormat::StlBinary
        );
    }
}
