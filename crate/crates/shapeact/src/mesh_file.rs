//! JSON container for a hexahedral mesh with its quadrature samples and
//! surface embedding.
//!
//! ```text
//! {
//!   "format": "shapeact-mesh", "version": 1,
//!   "h": voxel size,
//!   "nodes": [[x, y, z], ...],
//!   "elements": [[n0, ..., n7], ...]      corners in z-fastest order,
//!   "cells": [[i, j, k], ...]             grid index of each element,
//!   "tags": ["free" | "fixed" | "jaw", ...] one per node,
//!   "cuts": [{"elements": [a, b]}, ...],
//!   "samples": {"per_element": N, "points": [[x, y, z], ...]},
//!   "embedding": {"host": [...], "weights": [[w0, ..., w7], ...]} | null
//! }
//! ```
//!
//! Floats carry 17 significant digits. Sample points are redundant with
//! the mesh and are checked against a rebuild on load.

use std::path::Path;

use serde::{Deserialize, Serialize};
use shapeact_core::geometry::{build_samples, CutRecord, Embedding, HexMesh, NodeTag, SampleSet};
use shapeact_core::Vec3;

use crate::{json, Error, Result};

pub const FORMAT: &str = "shapeact-mesh";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub per_element: usize,
    pub points: Vec<Vec3>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshFile {
    pub format: String,
    pub version: u32,
    pub h: f64,
    pub nodes: Vec<Vec3>,
    pub elements: Vec<[usize; 8]>,
    pub cells: Vec<[i64; 3]>,
    pub tags: Vec<NodeTag>,
    pub cuts: Vec<CutRecord>,
    pub samples: SampleRecord,
    pub embedding: Option<Embedding>,
}

/// Contents of a mesh file after validation.
#[derive(Clone, Debug)]
pub struct MeshBundle {
    pub mesh: HexMesh,
    pub samples: SampleSet,
    pub embedding: Option<Embedding>,
}

impl MeshFile {
    pub fn new(mesh: &HexMesh, samples: &SampleSet, embedding: Option<&Embedding>) -> Self {
        MeshFile {
            format: FORMAT.into(),
            version: VERSION,
            h: mesh.h,
            nodes: mesh.nodes.clone(),
            elements: mesh.elements.clone(),
            cells: mesh.cells.clone(),
            tags: mesh.tags.clone(),
            cuts: mesh.cuts.clone(),
            samples: SampleRecord { per_element: samples.per_element, points: samples.points.clone() },
            embedding: embedding.cloned(),
        }
    }

    pub fn validate(self, path: &Path) -> Result<MeshBundle> {
        let bad = |m: String| Error::format(path, m);
        if self.format != FORMAT || self.version != VERSION {
            return Err(bad(format!("expected {FORMAT} version {VERSION}, found {} version {}", self.format, self.version)));
        }
        let n = self.nodes.len();
        if self.tags.len() != n {
            return Err(bad(format!("{} tags for {n} nodes", self.tags.len())));
        }
        if self.cells.len() != self.elements.len() {
            return Err(bad(format!("{} cells for {} elements", self.cells.len(), self.elements.len())));
        }
        if let Some(e) = self.elements.iter().position(|el| el.iter().any(|&i| i >= n)) {
            return Err(bad(format!("element {e} references a missing node")));
        }
        if let Some(c) = self.cuts.iter().find(|c| c.elements.iter().any(|&e| e >= self.elements.len())) {
            return Err(bad(format!("cut {:?} references a missing element", c.elements)));
        }
        let mesh = HexMesh {
            h: self.h,
            nodes: self.nodes,
            elements: self.elements,
            cells: self.cells,
            tags: self.tags,
            cuts: self.cuts,
        };
        let samples = build_samples(&mesh, self.samples.per_element).map_err(|e| bad(e.to_string()))?;
        if samples.points != self.samples.points {
            return Err(bad("sample points do not match the mesh".into()));
        }
        if let Some(emb) = &self.embedding {
            if emb.host.len() != emb.weights.len() || emb.host.iter().any(|&e| e >= mesh.num_elements()) {
                return Err(bad("embedding references missing elements".into()));
            }
        }
        Ok(MeshBundle { mesh, samples, embedding: self.embedding })
    }
}

pub fn write(path: &Path, mesh: &HexMesh, samples: &SampleSet, embedding: Option<&Embedding>) -> Result<()> {
    json::write(path, &MeshFile::new(mesh, samples, embedding), false)
}

pub fn read(path: &Path) -> Result<MeshBundle> {
    json::read::<MeshFile>(path)?.validate(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use shapeact_core::geometry::{embed_surface, SurfaceMesh};

    #[test]
    fn round_trip_is_exact() {
        let mut mesh = HexMesh::grid([2, 1, 1], 0.3);
        mesh.tag_nodes_in_box([0.0; 3], [0.0, 0.3, 0.3], NodeTag::Fixed);
        let surface = SurfaceMesh::box_surface([0.01; 3], [0.59, 0.29, 0.29], [2, 1, 1]);
        let emb = embed_surface(&mesh, &surface).unwrap();
        let samples = build_samples(&mesh, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.json");
        write(&path, &mesh, &samples, Some(&emb)).unwrap();
        let back = read(&path).unwrap();
        assert_eq!(back.mesh, mesh);
        assert_eq!(back.samples, samples);
        assert_eq!(back.embedding.unwrap(), emb);
    }

    #[test]
    fn inconsistent_files_are_rejected() {
        let mesh = HexMesh::grid([1, 1, 1], 1.0);
        let samples = build_samples(&mesh, 1).unwrap();
        let mut f = MeshFile::new(&mesh, &samples, None);
        f.tags.pop();
        assert!(f.clone().validate(Path::new("m.json")).is_err());
        let mut f = MeshFile::new(&mesh, &samples, None);
        f.samples.points[0][0] += 1e-9;
        let e = f.validate(Path::new("m.json")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
