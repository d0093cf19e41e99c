use std::io::Write;

use crate::geometry::PointCloud;
use crate::transform::{FrameId, Point3, Vec3};

use super::IoError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Reads the `vertex` element's `x y z` and, when all three are present,
/// `nx ny nz`. A `comment frame <symbol>` header line sets the frame label;
/// otherwise `default_frame` is used.
pub fn parse_ply(bytes: &[u8], default_frame: FrameId) -> Result<PointCloud, IoError> {
    let (elements, format, frame, body_start) = parse_header(bytes)?;
    let frame = frame.unwrap_or(default_frame);
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut want_normals = false;

    let mut reader: Box<dyn FnMut(Scalar) -> Result<f64, IoError>> = match format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(&bytes[body_start..])
                .map_err(|_| IoError::format("ply", "ASCII body is not UTF-8"))?;
            let mut toks = text.split_ascii_whitespace();
            Box::new(move |_| {
                toks.next()
                    .ok_or_else(|| IoError::format("ply", "unexpected end of data"))?
                    .parse::<f64>()
                    .map_err(|e| IoError::format("ply", e.to_string()))
            })
        }
        PlyFormat::BinaryLittleEndian => {
            let mut pos = body_start;
            Box::new(move |s: Scalar| {
                let end = pos + s.size();
                if end > bytes.len() {
                    return Err(IoError::format("ply", "unexpected end of data"));
                }
                let v = s.read_le(&bytes[pos..end]);
                pos = end;
                Ok(v)
            })
        }
    };

    for el in &elements {
        let is_vertex = el.name == "vertex";
        let slot = |name: &str| {
            el.props
                .iter()
                .position(|p| matches!(p, Property::Scalar(n, _) if n == name))
        };
        let (xi, yi, zi) = (slot("x"), slot("y"), slot("z"));
        let (nxi, nyi, nzi) = (slot("nx"), slot("ny"), slot("nz"));
        if is_vertex {
            if xi.is_none() || yi.is_none() || zi.is_none() {
                return Err(IoError::format("ply", "vertex element lacks x, y or z"));
            }
            want_normals = nxi.is_some() && nyi.is_some() && nzi.is_some();
        }
        let mut values = vec![0.0; el.props.len()];
        for _ in 0..el.count {
            for (k, p) in el.props.iter().enumerate() {
                match p {
                    Property::Scalar(_, s) => values[k] = reader(*s)?,
                    Property::List(count_ty, item_ty) => {
                        let n = reader(*count_ty)? as usize;
                        for _ in 0..n {
                            reader(*item_ty)?;
                        }
                    }
                }
            }
            if is_vertex {
                points.push(Point3::new(
                    values[xi.unwrap()],
                    values[yi.unwrap()],
                    values[zi.unwrap()],
                ));
                if want_normals {
                    normals.push(Vec3::new(
                        values[nxi.unwrap()],
                        values[nyi.unwrap()],
                        values[nzi.unwrap()],
                    ));
                }
            }
        }
    }
    if !elements.iter().any(|e| e.name == "vertex") {
        return Err(IoError::format("ply", "no vertex element"));
    }
    Ok(if want_normals {
        PointCloud::with_normals(points, normals, frame)
    } else {
        PointCloud::new(points, frame)
    })
}

type Header = (Vec<Element>, PlyFormat, Option<FrameId>, usize);

fn parse_header(bytes: &[u8]) -> Result<Header, IoError> {
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| IoError::format("ply", "missing end_header"))?;
        let line = String::from_utf8_lossy(&bytes[pos..pos + end]).trim().to_string();
        pos += end + 1;
        let done = line == "end_header";
        lines.push(line);
        if done {
            break;
        }
    }
    if lines.first().map(String::as_str) != Some("ply") {
        return Err(IoError::parse("ply", 1, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut frame = None;
    let mut elements: Vec<Element> = Vec::new();
    for (ln, line) in lines.iter().enumerate().skip(1) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let err = |m: &str| IoError::parse("ply", ln + 1, m.to_string());
        match toks.as_slice() {
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, ..] => return Err(err(&format!("unsupported format {other}"))),
            ["comment", "frame", sym] => frame = Some(sym.parse::<FrameId>().map_err(|e| err(&e))?),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| err("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, _name] => {
                let p = Property::List(
                    Scalar::parse(ct).ok_or_else(|| err("bad list count type"))?,
                    Scalar::parse(it).ok_or_else(|| err("bad list item type"))?,
                );
                elements
                    .last_mut()
                    .ok_or_else(|| err("property before element"))?
                    .props
                    .push(p);
            }
            ["property", ty, name] => {
                let p = Property::Scalar(
                    name.to_string(),
                    Scalar::parse(ty).ok_or_else(|| err("bad property type"))?,
                );
                elements
                    .last_mut()
                    .ok_or_else(|| err("property before element"))?
                    .props
                    .push(p);
            }
            ["comment", ..] | ["obj_info", ..] | ["end_header"] | [] => {}
            _ => return Err(err("unrecognised header line")),
        }
    }
    let format = format.ok_or_else(|| IoError::format("ply", "missing format line"))?;
    Ok((elements, format, frame, pos))
}

/// Writes `x y z [nx ny nz]` as doubles and records the frame in a comment.
pub fn write_ply(cloud: &PointCloud, format: PlyFormat, mut out: impl Write) -> Result<(), IoError> {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(out, "ply\nformat {fmt} 1.0\ncomment frame {}", cloud.frame)?;
    writeln!(out, "element vertex {}", cloud.len())?;
    for p in ["x", "y", "z"] {
        writeln!(out, "property double {p}")?;
    }
    if cloud.normals.is_some() {
        for p in ["nx", "ny", "nz"] {
            writeln!(out, "property double {p}")?;
        }
    }
    writeln!(out, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        let mut row: Vec<f64> = p.iter().copied().collect();
        if let Some(ns) = &cloud.normals {
            row.extend(ns[i].iter());
        }
        match format {
            PlyFormat::Ascii => {
                let s: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                writeln!(out, "{}", s.join(" "))?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in row {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}
