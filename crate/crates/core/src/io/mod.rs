//! Mesh and point-cloud file formats: STL (binary and ASCII), OBJ (vertices
//! and faces) and PLY (ASCII and binary little-endian).

mod obj;
mod ply;
mod stl;

use std::path::Path;

use thiserror::Error;

use crate::geometry::{CleanReport, MeshError, TriangleMesh};
use crate::transform::FrameId;

pub use obj::{parse_obj, write_obj};
pub use ply::{parse_ply, write_ply, PlyFormat};
pub use stl::{parse_stl, write_stl_ascii, write_stl_binary};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{format} parse error at line {line}: {msg}")]
    Parse {
        format: &'static str,
        line: usize,
        msg: String,
    },
    #[error("{format}: {msg}")]
    Format { format: &'static str, msg: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

impl IoError {
    pub(crate) fn parse(format: &'static str, line: usize, msg: impl Into<String>) -> Self {
        IoError::Parse {
            format,
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn format(format: &'static str, msg: impl Into<String>) -> Self {
        IoError::Format {
            format,
            msg: msg.into(),
        }
    }
}

/// Loads an STL or OBJ mesh chosen by file extension.
pub fn load_mesh(path: impl AsRef<Path>, frame: FrameId) -> Result<(TriangleMesh, CleanReport), IoError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("obj") => parse_obj(&String::from_utf8_lossy(&bytes), frame),
        _ => parse_stl(&bytes, frame),
    }
}
