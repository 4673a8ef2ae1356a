use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{HexMesh, SurfaceMesh, CORNERS};
use crate::linalg::{floor, sqrt, Vec3};
use crate::{Error, Result};

/// Trilinear weights of the eight corners at local coordinates `xi ∈ [0,1]³`.
pub fn trilinear_weights(xi: Vec3) -> [f64; 8] {
    let mut w = [0.0; 8];
    for (c, off) in CORNERS.iter().enumerate() {
        w[c] = (0..3).map(|d| if off[d] == 1 { xi[d] } else { 1.0 - xi[d] }).product();
    }
    w
}

/// Trilinear attachment of surface vertices to host elements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub host: Vec<usize>,
    pub weights: Vec<[f64; 8]>,
}

impl Embedding {
    pub fn num_vertices(&self) -> usize {
        self.host.len()
    }

    /// Surface positions for nodal positions `u` (flat, `3·n`).
    pub fn interpolate(&self, mesh: &HexMesh, u: &[f64]) -> Vec<Vec3> {
        self.host
            .iter()
            .zip(self.weights.iter())
            .map(|(&e, w)| {
                let mut p = [0.0; 3];
                for (c, &n) in mesh.elements[e].iter().enumerate() {
                    for d in 0..3 {
                        p[d] += w[c] * u[3 * n + d];
                    }
                }
                p
            })
            .collect()
    }

    /// Pulls per-vertex gradients back onto the nodes: the transpose of
    /// [`Embedding::interpolate`].
    pub fn pullback(&self, mesh: &HexMesh, grad: &[Vec3]) -> Vec<f64> {
        let mut out = vec![0.0; 3 * mesh.num_nodes()];
        for ((&e, w), g) in self.host.iter().zip(self.weights.iter()).zip(grad.iter()) {
            for (c, &n) in mesh.elements[e].iter().enumerate() {
                for d in 0..3 {
                    out[3 * n + d] += w[c] * g[d];
                }
            }
        }
        out
    }
}

/// Embeds every surface vertex in the element containing it. Vertices
/// outside the voxelization but within `h/2` of an element are clamped onto
/// the nearest one.
pub fn embed_surface(mesh: &HexMesh, surface: &SurfaceMesh) -> Result<Embedding> {
    let h = mesh.h;
    let lookup = mesh.cell_lookup();
    let mut host = Vec::with_capacity(surface.vertices.len());
    let mut weights = Vec::with_capacity(surface.vertices.len());
    let mut outside = Vec::new();
    for (vi, p) in surface.vertices.iter().enumerate() {
        let cell = p.map(|x| floor(x / h) as i64);
        let found = match lookup.get(&cell) {
            Some(&e) => Some(e),
            None => {
                let mut best: Option<(f64, usize)> = None;
                for di in -1..=1 {
                    for dj in -1..=1 {
                        for dk in -1..=1 {
                            let c = [cell[0] + di, cell[1] + dj, cell[2] + dk];
                            let Some(&e) = lookup.get(&c) else { continue };
                            let dist = box_distance(*p, c, h);
                            if best.is_none_or(|(bd, be)| dist < bd || (dist == bd && e < be)) {
                                best = Some((dist, e));
                            }
                        }
                    }
                }
                match best {
                    Some((d, e)) if d <= 0.5 * h * (1.0 + 1e-12) => Some(e),
                    _ => None,
                }
            }
        };
        let Some(e) = found else {
            outside.push(vi);
            continue;
        };
        let c = mesh.cells[e];
        let xi = [0, 1, 2].map(|d| (p[d] / h - c[d] as f64).clamp(0.0, 1.0));
        let mut w = trilinear_weights(xi);
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        host.push(e);
        weights.push(w);
    }
    if !outside.is_empty() {
        return Err(Error::EmbeddingOutside { vertices: outside });
    }
    Ok(Embedding { host, weights })
}

fn box_distance(p: Vec3, cell: [i64; 3], h: f64) -> f64 {
    let mut s = 0.0;
    for d in 0..3 {
        let lo = cell[d] as f64 * h;
        let hi = lo + h;
        let g = if p[d] < lo {
            lo - p[d]
        } else if p[d] > hi {
            p[d] - hi
        } else {
            0.0
        };
        s += g * g;
    }
    sqrt(s)
}

#[cfg(test)]
mod tests {
    extern crate std;
    use super::*;

    fn single_vertex(p: Vec3) -> SurfaceMesh {
        SurfaceMesh { vertices: vec![p], faces: Vec::new() }
    }

    #[test]
    fn center_has_uniform_weights() {
        let m = HexMesh::grid([1, 1, 1], 2.0);
        let emb = embed_surface(&m, &single_vertex([1.0; 3])).unwrap();
        assert!(emb.weights[0].iter().all(|&w| w == 0.125));
    }

    #[test]
    fn node_gets_unit_weight() {
        let m = HexMesh::grid([2, 1, 1], 1.0);
        let emb = embed_surface(&m, &single_vertex([1.0, 1.0, 0.0])).unwrap();
        let w = emb.weights[0];
        let e = emb.host[0];
        for (c, &n) in m.elements[e].iter().enumerate() {
            let expected = if m.nodes[n] == [1.0, 1.0, 0.0] { 1.0 } else { 0.0 };
            assert_eq!(w[c], expected);
        }
    }

    #[test]
    fn marginally_outside_is_clamped() {
        let m = HexMesh::grid([1, 1, 1], 1.0);
        let emb = embed_surface(&m, &single_vertex([1.3, 0.5, 0.5])).unwrap();
        let p = emb.interpolate(&m, &m.rest_positions())[0];
        assert_eq!(p, [1.0, 0.5, 0.5]);
        match embed_surface(&m, &single_vertex([1.6, 0.5, 0.5])) {
            Err(Error::EmbeddingOutside { vertices }) => assert_eq!(vertices, vec![0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pullback_is_interpolation_transpose() {
        let m = HexMesh::grid([2, 2, 1], 0.5);
        let s = SurfaceMesh { vertices: vec![[0.1, 0.7, 0.2], [0.9, 0.3, 0.45]], faces: Vec::new() };
        let emb = embed_surface(&m, &s).unwrap();
        let u: Vec<f64> = (0..3 * m.num_nodes()).map(|i| (i as f64 * 0.37).sin()).collect();
        let g = [[0.3, -1.0, 2.0], [0.5, 0.25, -0.75]];
        let p = emb.interpolate(&m, &u);
        let lhs: f64 = p.iter().zip(g.iter()).map(|(a, b)| a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).sum();
        let rhs: f64 = emb.pullback(&m, &g).iter().zip(u.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
