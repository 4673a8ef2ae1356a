//! Wavefront OBJ surfaces: `v` and `f` records only. Polygons are
//! fan-triangulated; texture and normal indices are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use shapeact_core::geometry::SurfaceMesh;
use shapeact_core::Vec3;

use crate::{Error, Result};

pub fn parse(text: &str, path: &Path) -> Result<SurfaceMesh> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let bad = |msg: String| Error::format(path, format!("line {}: {msg}", lineno + 1));
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for c in &mut p {
                    let tok = it.next().ok_or_else(|| bad("vertex needs three coordinates".into()))?;
                    *c = tok.parse().map_err(|_| bad(format!("bad coordinate {tok:?}")))?;
                }
                vertices.push(p);
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| bad(format!("bad face index {tok:?}")))?;
                    let resolved = if i > 0 { i - 1 } else { vertices.len() as i64 + i };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(bad(format!("face index {i} out of range")));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(bad("face needs at least three vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    SurfaceMesh::new(vertices, faces).map_err(|e| Error::format(path, e))
}

pub fn read(path: &Path) -> Result<SurfaceMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}

/// OBJ text of `positions` with `faces`; `colors` adds per-vertex RGB in
/// `[0, 1]` after the coordinates.
pub fn format(positions: &[Vec3], faces: &[[usize; 3]], colors: Option<&[Vec3]>) -> String {
    let mut out = String::new();
    for (i, p) in positions.iter().enumerate() {
        let _ = write!(out, "v {} {} {}", p[0], p[1], p[2]);
        if let Some(c) = colors {
            let _ = write!(out, " {:.6} {:.6} {:.6}", c[i][0], c[i][1], c[i][2]);
        }
        out.push('\n');
    }
    for f in faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn write(path: &Path, positions: &[Vec3], faces: &[[usize; 3]], colors: Option<&[Vec3]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, format(positions, faces, colors)).map_err(|e| Error::io(path, e))
}
