use std::io::Write;

use crate::geometry::{CleanReport, TriangleMesh};
use crate::transform::{FrameId, Point3};

use super::IoError;

/// Parses binary or ASCII STL. Binary is assumed when the byte length matches
/// the triangle count in the header, which also covers binary files whose
/// header happens to start with `solid`.
pub fn parse_stl(bytes: &[u8], frame: FrameId) -> Result<(TriangleMesh, CleanReport), IoError> {
    let soup = if is_binary(bytes) {
        parse_binary(bytes)?
    } else {
        parse_ascii(&String::from_utf8_lossy(bytes))?
    };
    Ok(TriangleMesh::from_soup(&soup, frame)?)
}

fn is_binary(bytes: &[u8]) -> bool {
    if bytes.len() < 84 {
        return false;
    }
    let n = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    bytes.len() == 84 + n * 50
}

fn parse_binary(bytes: &[u8]) -> Result<Vec<[Point3; 3]>, IoError> {
    let n = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let f = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
    Ok((0..n)
        .map(|i| {
            let base = 84 + i * 50 + 12;
            let v = |k: usize| Point3::new(f(base + k * 12), f(base + k * 12 + 4), f(base + k * 12 + 8));
            [v(0), v(1), v(2)]
        })
        .collect())
}

fn parse_ascii(text: &str) -> Result<Vec<[Point3; 3]>, IoError> {
    let mut soup = Vec::new();
    let mut current: Vec<Point3> = Vec::new();
    let mut saw_solid = false;
    for (ln, line) in text.lines().enumerate() {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("solid") => saw_solid = true,
            Some("vertex") => {
                let xyz: Result<Vec<f64>, _> = toks.map(str::parse::<f64>).collect();
                match xyz.as_deref() {
                    Ok([x, y, z]) => current.push(Point3::new(*x, *y, *z)),
                    _ => return Err(IoError::parse("stl", ln + 1, "vertex needs three numbers")),
                }
            }
            Some("endfacet") => {
                if current.len() != 3 {
                    return Err(IoError::parse("stl", ln + 1, "facet must have three vertices"));
                }
                soup.push([current[0], current[1], current[2]]);
                current.clear();
            }
            _ => {}
        }
    }
    if !saw_solid {
        return Err(IoError::format("stl", "neither binary nor ASCII STL"));
    }
    Ok(soup)
}

/// Binary STL (f32 coordinates).
pub fn write_stl_binary(mesh: &TriangleMesh, mut out: impl Write) -> Result<(), IoError> {
    let mut header = [0u8; 80];
    let tag = b"binary stl";
    header[..tag.len()].copy_from_slice(tag);
    out.write_all(&header)?;
    out.write_all(&(mesh.len() as u32).to_le_bytes())?;
    for i in 0..mesh.len() {
        let n = mesh.face_normal(i);
        for c in n.iter() {
            out.write_all(&(*c as f32).to_le_bytes())?;
        }
        for v in mesh.corners(i) {
            for c in v.iter() {
                out.write_all(&(*c as f32).to_le_bytes())?;
            }
        }
        out.write_all(&[0u8, 0u8])?;
    }
    Ok(())
}

/// ASCII STL with full double precision.
pub fn write_stl_ascii(mesh: &TriangleMesh, name: &str, mut out: impl Write) -> Result<(), IoError> {
    writeln!(out, "solid {name}")?;
    for i in 0..mesh.len() {
        let n = mesh.face_normal(i);
        writeln!(out, "  facet normal {:e} {:e} {:e}", n.x, n.y, n.z)?;
        writeln!(out, "    outer loop")?;
        for v in mesh.corners(i) {
            writeln!(out, "      vertex {:e} {:e} {:e}", v.x, v.y, v.z)?;
        }
        writeln!(out, "    endloop")?;
        writeln!(out, "  endfacet")?;
    }
    writeln!(out, "endsolid {name}")?;
    Ok(())
}
