use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{add3, cross3, norm3, scale3, sub3, Vec3};
use crate::{Error, Result};

/// Triangle surface mesh. Normals are always derived from positions.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl SurfaceMesh {
    /// Validates index ranges, finiteness and non-degenerate faces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidInput(format!("vertex {i} is not finite")));
        }
        for (f, tri) in faces.iter().enumerate() {
            if tri.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::InvalidInput(format!("face {f} references a missing vertex")));
            }
            let [a, b, c] = tri.map(|i| vertices[i]);
            if norm3(cross3(sub3(b, a), sub3(c, a))) == 0.0 {
                return Err(Error::InvalidInput(format!("face {f} has zero area")));
            }
        }
        Ok(SurfaceMesh { vertices, faces })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Edges used by an odd number of faces; empty for closed surfaces.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let mut count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for tri in &self.faces {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        count.into_iter().filter(|(_, c)| c % 2 == 1).map(|(e, _)| e).collect()
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.vertices {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    pub fn translated(&self, t: Vec3) -> Self {
        SurfaceMesh { vertices: self.vertices.iter().map(|&p| add3(p, t)).collect(), faces: self.faces.clone() }
    }

    pub fn vertex_normals(&self) -> Result<Vec<Vec3>> {
        vertex_normals(&self.vertices, &self.faces)
    }

    /// Same connectivity, new positions.
    pub fn with_positions(&self, vertices: Vec<Vec3>) -> Self {
        SurfaceMesh { vertices, faces: self.faces.clone() }
    }

    /// Closed, outward-oriented triangulation of an axis-aligned box with
    /// `divisions[d]` segments along axis `d`.
    pub fn box_surface(lo: Vec3, hi: Vec3, divisions: [usize; 3]) -> Self {
        let div = divisions.map(|d| d.max(1));
        let mut ids: BTreeMap<[usize; 3], usize> = BTreeMap::new();
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut vid = |key: [usize; 3], vertices: &mut Vec<Vec3>| -> usize {
            *ids.entry(key).or_insert_with(|| {
                let p = [0, 1, 2].map(|d| lo[d] + (hi[d] - lo[d]) * key[d] as f64 / div[d] as f64);
                vertices.push(p);
                vertices.len() - 1
            })
        };
        for axis in 0..3 {
            let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
            for side in 0..2 {
                let fixed = side * div[axis];
                let mut normal = [0.0; 3];
                normal[axis] = if side == 0 { -1.0 } else { 1.0 };
                for i in 0..div[ua] {
                    for j in 0..div[va] {
                        let key = |di: usize, dj: usize| {
                            let mut k = [0usize; 3];
                            k[axis] = fixed;
                            k[ua] = i + di;
                            k[va] = j + dj;
                            k
                        };
                        let q = [key(0, 0), key(1, 0), key(1, 1), key(0, 1)].map(|k| vid(k, &mut vertices));
                        for tri in [[q[0], q[1], q[2]], [q[0], q[2], q[3]]] {
                            let [a, b, c] = tri.map(|i| vertices[i]);
                            let n = cross3(sub3(b, a), sub3(c, a));
                            if crate::linalg::dot3(n, normal) > 0.0 {
                                faces.push(tri);
                            } else {
                                faces.push([tri[0], tri[2], tri[1]]);
                            }
                        }
                    }
                }
            }
        }
        SurfaceMesh { vertices, faces }
    }

    /// Subdivided icosahedron projected onto a sphere.
    pub fn icosphere(center: Vec3, radius: f64, subdivisions: usize) -> Self {
        let t = (1.0 + crate::linalg::sqrt(5.0)) / 2.0;
        let mut verts: Vec<Vec3> = vec![
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ];
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for v in verts.iter_mut() {
            *v = scale3(*v, 1.0 / norm3(*v));
        }
        for _ in 0..subdivisions {
            let mut mid: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            for tri in &faces {
                let mut m = [0usize; 3];
                for k in 0..3 {
                    let (a, b) = (tri[k], tri[(k + 1) % 3]);
                    m[k] = *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                        let p = scale3(add3(verts[a], verts[b]), 0.5);
                        verts.push(scale3(p, 1.0 / norm3(p)));
                        verts.len() - 1
                    });
                }
                next.push([tri[0], m[0], m[2]]);
                next.push([tri[1], m[1], m[0]]);
                next.push([tri[2], m[2], m[1]]);
                next.push(m);
            }
            faces = next;
        }
        let vertices = verts.into_iter().map(|v| add3(center, scale3(v, radius))).collect();
        SurfaceMesh { vertices, faces }
    }
}

/// Area-weighted vertex normals of a triangle mesh with the given
/// positions. Fails on zero-area faces and on vertices whose accumulated
/// normal vanishes.
pub fn vertex_normals(positions: &[Vec3], faces: &[[usize; 3]]) -> Result<Vec<Vec3>> {
    let mut acc = vec![[0.0; 3]; positions.len()];
    for (f, tri) in faces.iter().enumerate() {
        let [a, b, c] = tri.map(|i| positions[i]);
        let n = cross3(sub3(b, a), sub3(c, a));
        if norm3(n) == 0.0 {
            return Err(Error::DegenerateFace(f));
        }
        for &i in tri {
            acc[i] = add3(acc[i], n);
        }
    }
    acc.into_iter()
        .enumerate()
        .map(|(i, n)| {
            let l = norm3(n);
            if l == 0.0 {
                // Isolated vertices carry no normal; report them via the first face using them.
                let f = faces.iter().position(|t| t.contains(&i));
                match f {
                    Some(f) => Err(Error::DegenerateFace(f)),
                    None => Ok([0.0; 3]),
                }
            } else {
                Ok(scale3(n, 1.0 / l))
            }
        })
        .collect()
}
