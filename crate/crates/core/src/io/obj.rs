use std::io::Write;

use crate::geometry::{CleanReport, TriangleMesh};
use crate::transform::{FrameId, Point3};

use super::IoError;

/// Reads `v` and `f` records; polygons are fan-triangulated, texture and
/// normal indices (`f 1/2/3`) and negative (relative) indices are accepted.
pub fn parse_obj(text: &str, frame: FrameId) -> Result<(TriangleMesh, CleanReport), IoError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let xyz: Vec<f64> = toks
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| IoError::parse("obj", ln + 1, e.to_string()))?;
                if xyz.len() != 3 {
                    return Err(IoError::parse("obj", ln + 1, "vertex needs three coordinates"));
                }
                vertices.push(Point3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = toks
                    .map(|t| resolve_index(t, vertices.len()))
                    .collect::<Option<_>>()
                    .ok_or_else(|| IoError::parse("obj", ln + 1, "bad face index"))?;
                if idx.len() < 3 {
                    return Err(IoError::parse("obj", ln + 1, "face needs at least three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(TriangleMesh::new(vertices, triangles, frame)?)
}

fn resolve_index(tok: &str, count: usize) -> Option<u32> {
    let i: i64 = tok.split('/').next()?.parse().ok()?;
    let zero_based = if i > 0 { i - 1 } else { count as i64 + i };
    (zero_based >= 0).then_some(zero_based as u32)
}

pub fn write_obj(mesh: &TriangleMesh, mut out: impl Write) -> Result<(), IoError> {
    for v in mesh.vertices() {
        writeln!(out, "v {:e} {:e} {:e}", v.x, v.y, v.z)?;
    }
    for t in mesh.triangles() {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}
