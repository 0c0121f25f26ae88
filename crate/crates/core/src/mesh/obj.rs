//! Minimal Wavefront OBJ subset: `v x y z` and `f a b c` lines only.
//!
//! The rest pose and each deformed pose are stored as separate files with
//! identical face lists. Any other statement is a parse error.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Point3;

use super::{Mesh, MeshError};

/// Vertices and faces read from one OBJ file.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjData {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

pub fn parse_obj(text: &str) -> Result<ObjData, MeshError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| MeshError::Parse { line, message };
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad coordinate {t:?}: {e}"))))
                    .collect::<Result<_, _>>()?;
                if coords.len() != 3 {
                    return Err(err(format!("vertex needs 3 coordinates, got {}", coords.len())));
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tokens
                    .map(|t| match t.parse::<usize>() {
                        Ok(0) => Err(err("face indices are 1-based".into())),
                        Ok(k) => Ok(k - 1),
                        Err(e) => Err(err(format!("bad face index {t:?}: {e}"))),
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(err(format!("only triangles are supported, got {} indices", idx.len())));
                }
                triangles.push([idx[0], idx[1], idx[2]]);
            }
            Some(other) => return Err(err(format!("unsupported statement {other:?}"))),
            None => unreachable!(),
        }
    }
    for (t, tri) in triangles.iter().enumerate() {
        if let Some(&bad) = tri.iter().find(|&&k| k >= vertices.len()) {
            return Err(MeshError::IndexOutOfRange {
                triangle: t,
                index: bad,
                vertices: vertices.len(),
            });
        }
    }
    Ok(ObjData { vertices, triangles })
}

pub fn format_obj(vertices: &[Point3<f64>], triangles: &[[usize; 3]]) -> String {
    let mut out = String::with_capacity(vertices.len() * 40 + triangles.len() * 20);
    for v in vertices {
        // `{:?}` prints the shortest representation that round-trips exactly
        let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for [a, b, c] in triangles {
        let _ = writeln!(out, "f {} {} {}", a + 1, b + 1, c + 1);
    }
    out
}

pub fn write_obj(path: &Path, vertices: &[Point3<f64>], triangles: &[[usize; 3]]) -> Result<(), MeshError> {
    std::fs::write(path, format_obj(vertices, triangles))?;
    Ok(())
}

pub fn read_obj(path: &Path) -> Result<ObjData, MeshError> {
    parse_obj(&std::fs::read_to_string(path)?)
}

/// Loads a deformed pose against its rest pose; face lists must match.
pub fn read_mesh(deformed: &Path, rest: &Path) -> Result<Mesh, MeshError> {
    let d = read_obj(deformed)?;
    let r = read_obj(rest)?;
    if d.triangles != r.triangles {
        return Err(MeshError::TopologyMismatch);
    }
    Mesh::from_rest(r.vertices, r.triangles)?.with_vertices(d.vertices)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let verts = vec![
            Point3::new(0.1, -2.0 / 3.0, 1e-17),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, std::f64::consts::PI),
        ];
        let text = format_obj(&verts, &[[0, 1, 2]]);
        let back = parse_obj(&text).unwrap();
        assert_eq!(back.vertices, verts);
        assert_eq!(back.triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn rejects_other_statements_with_line_number() {
        let text = "v 0 0 0\nv 1 0 0\nvn 0 0 1\n";
        match parse_obj(text) {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        assert!(matches!(parse_obj(quad), Err(MeshError::Parse { line: 5, .. })));
        let slashes = "v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1/1 2/2 3/3\n";
        assert!(matches!(parse_obj(slashes), Err(MeshError::Parse { line: 4, .. })));
    }

    #[test]
    fn rejects_out_of_range_face() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1 2 4\n";
        assert!(matches!(parse_obj(text), Err(MeshError::IndexOutOfRange { .. })));
    }
}
