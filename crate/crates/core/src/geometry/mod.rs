//! Simulation geometry: surface meshes, voxelized hexahedral meshes, cut
//! duplication, surface embedding and quadrature samples.
//!
//! # Node ordering
//!
//! The eight corners of a hexahedron are numbered z-fastest
//! lexicographically: corner `c` sits at offset
//! `((c >> 2) & 1, (c >> 1) & 1, c & 1)` in units of the voxel size. The
//! same numbering is used by the mapping matrices, assembly and the file
//! formats.

mod cut;
mod embed;
mod samples;
mod surface;
mod voxelize;

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::Vec3;

pub use cut::{cut_records_on_plane, duplicate_cut_vertices, Axis, CutRecord};
pub use embed::{embed_surface, trilinear_weights, Embedding};
pub use samples::{build_samples, SampleSet, ShapeGradients};
pub use surface::{vertex_normals, SurfaceMesh};
pub use voxelize::{point_inside, voxelize, voxelize_with, Occupancy};

/// Corner offsets in z-fastest order.
pub const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [0, 0, 1],
    [0, 1, 0],
    [0, 1, 1],
    [1, 0, 0],
    [1, 0, 1],
    [1, 1, 0],
    [1, 1, 1],
];

/// Boundary-condition label of a simulation node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeTag {
    /// Solved for.
    Free,
    /// Bone held at its rest position (e.g. the skull).
    Fixed,
    /// Bone moved rigidly by the jaw transform.
    Jaw,
}

impl NodeTag {
    pub fn is_dirichlet(self) -> bool {
        !matches!(self, NodeTag::Free)
    }
}

/// Voxelized simulation domain.
///
/// Voxel `(i, j, k)` spans `[i·h, (i+1)·h] × …`; the grid is anchored at the
/// world origin so integer-`h` translations map node positions exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct HexMesh {
    pub h: f64,
    pub nodes: Vec<Vec3>,
    pub elements: Vec<[usize; 8]>,
    /// Grid coordinates of each element.
    pub cells: Vec<[i64; 3]>,
    pub tags: Vec<NodeTag>,
    /// Applied cut faces.
    pub cuts: Vec<CutRecord>,
}

impl HexMesh {
    /// Builds a mesh from occupied cells, deduplicating shared corners.
    /// Elements keep the given cell order.
    pub fn from_cells(h: f64, cells: Vec<[i64; 3]>) -> Self {
        let mut ids: BTreeMap<[i64; 3], usize> = BTreeMap::new();
        let mut nodes = Vec::new();
        let mut elements = Vec::with_capacity(cells.len());
        for cell in &cells {
            let mut el = [0usize; 8];
            for (c, off) in CORNERS.iter().enumerate() {
                let key = [cell[0] + off[0] as i64, cell[1] + off[1] as i64, cell[2] + off[2] as i64];
                el[c] = *ids.entry(key).or_insert_with(|| {
                    nodes.push([key[0] as f64 * h, key[1] as f64 * h, key[2] as f64 * h]);
                    nodes.len() - 1
                });
            }
            elements.push(el);
        }
        let tags = vec![NodeTag::Free; nodes.len()];
        HexMesh { h, nodes, elements, cells, tags, cuts: Vec::new() }
    }

    /// Structured `nx × ny × nz` block with its minimum corner at the origin.
    pub fn grid(dims: [usize; 3], h: f64) -> Self {
        let mut cells = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for i in 0..dims[0] as i64 {
            for j in 0..dims[1] as i64 {
                for k in 0..dims[2] as i64 {
                    cells.push([i, j, k]);
                }
            }
        }
        Self::from_cells(h, cells)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element_volume(&self) -> f64 {
        self.h * self.h * self.h
    }

    pub fn element_min_corner(&self, e: usize) -> Vec3 {
        let c = self.cells[e];
        [c[0] as f64 * self.h, c[1] as f64 * self.h, c[2] as f64 * self.h]
    }

    pub fn cell_lookup(&self) -> BTreeMap<[i64; 3], usize> {
        self.cells.iter().enumerate().map(|(e, c)| (*c, e)).collect()
    }

    /// Rest configuration as a flat `3·n` vector.
    pub fn rest_positions(&self) -> Vec<f64> {
        self.nodes.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.nodes {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    /// Global degrees of freedom of an element, corner-major.
    pub fn element_dofs(&self, e: usize) -> [usize; 24] {
        let mut out = [0; 24];
        for (c, &n) in self.elements[e].iter().enumerate() {
            for d in 0..3 {
                out[3 * c + d] = 3 * n + d;
            }
        }
        out
    }

    pub fn gather(&self, e: usize, u: &[f64]) -> [f64; 24] {
        let mut out = [0.0; 24];
        for (c, &n) in self.elements[e].iter().enumerate() {
            out[3 * c..3 * c + 3].copy_from_slice(&u[3 * n..3 * n + 3]);
        }
        out
    }

    /// Tags every node inside the closed box `[lo, hi]`, with a tolerance of
    /// `1e-9·h`.
    pub fn tag_nodes_in_box(&mut self, lo: Vec3, hi: Vec3, tag: NodeTag) -> usize {
        let tol = 1e-9 * self.h;
        let mut count = 0;
        for (p, t) in self.nodes.iter().zip(self.tags.iter_mut()) {
            if (0..3).all(|d| p[d] >= lo[d] - tol && p[d] <= hi[d] + tol) {
                *t = tag;
                count += 1;
            }
        }
        count
    }

    pub fn partition(&self) -> Partition {
        Partition::from_tags(&self.tags)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Free(usize),
    Dirichlet(usize),
}

/// Split of the nodes into free and Dirichlet sets.
///
/// Free unknowns are laid out as `u_c[3·i + d]` for the `i`-th free node,
/// Dirichlet values as `u_d[3·j + d]` for the `j`-th Dirichlet node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub free: Vec<usize>,
    pub dirichlet: Vec<usize>,
    slots: Vec<Slot>,
}

impl Partition {
    pub fn from_tags(tags: &[NodeTag]) -> Self {
        let mut free = Vec::new();
        let mut dirichlet = Vec::new();
        let slots = tags
            .iter()
            .enumerate()
            .map(|(n, t)| {
                if t.is_dirichlet() {
                    dirichlet.push(n);
                    Slot::Dirichlet(dirichlet.len() - 1)
                } else {
                    free.push(n);
                    Slot::Free(free.len() - 1)
                }
            })
            .collect();
        Partition { free, dirichlet, slots }
    }

    pub fn num_nodes(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, node: usize) -> Slot {
        self.slots[node]
    }

    pub fn free_dofs(&self) -> Vec<usize> {
        self.free.iter().flat_map(|&n| (0..3).map(move |d| 3 * n + d)).collect()
    }

    pub fn dirichlet_dofs(&self) -> Vec<usize> {
        self.dirichlet.iter().flat_map(|&n| (0..3).map(move |d| 3 * n + d)).collect()
    }

    pub fn gather_free(&self, u: &[f64]) -> Vec<f64> {
        self.free_dofs().into_iter().map(|i| u[i]).collect()
    }

    pub fn gather_dirichlet(&self, u: &[f64]) -> Vec<f64> {
        self.dirichlet_dofs().into_iter().map(|i| u[i]).collect()
    }

    pub fn scatter_free(&self, u_c: &[f64], u: &mut [f64]) {
        for (i, &n) in self.free.iter().enumerate() {
            u[3 * n..3 * n + 3].copy_from_slice(&u_c[3 * i..3 * i + 3]);
        }
    }

    pub fn scatter_dirichlet(&self, u_d: &[f64], u: &mut [f64]) {
        for (i, &n) in self.dirichlet.iter().enumerate() {
            u[3 * n..3 * n + 3].copy_from_slice(&u_d[3 * i..3 * i + 3]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts() {
        let m = HexMesh::grid([2, 1, 1], 1.0);
        assert_eq!(m.num_elements(), 2);
        assert_eq!(m.num_nodes(), 12);
        let m = HexMesh::grid([6, 2, 2], 0.5);
        assert_eq!(m.num_nodes(), 7 * 3 * 3);
        assert_eq!(m.element_volume(), 0.125);
    }

    #[test]
    fn element_corners_follow_convention() {
        let m = HexMesh::grid([1, 1, 1], 2.0);
        for (c, off) in CORNERS.iter().enumerate() {
            let p = m.nodes[m.elements[0][c]];
            assert_eq!(p, [off[0] as f64 * 2.0, off[1] as f64 * 2.0, off[2] as f64 * 2.0]);
        }
    }

    #[test]
    fn partition_round_trip() {
        let mut m = HexMesh::grid([2, 1, 1], 1.0);
        assert_eq!(m.tag_nodes_in_box([0.0; 3], [0.0, 1.0, 1.0], NodeTag::Fixed), 4);
        let p = m.partition();
        assert_eq!(p.free.len(), 8);
        assert_eq!(p.dirichlet.len(), 4);
        let u = m.rest_positions();
        let mut v = vec![0.0; u.len()];
        p.scatter_free(&p.gather_free(&u), &mut v);
        p.scatter_dirichlet(&p.gather_dirichlet(&u), &mut v);
        assert_eq!(u, v);
    }
}
