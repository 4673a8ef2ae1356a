use alloc::vec::Vec;

use super::{HexMesh, CORNERS};
use crate::kernels::Vec9;
use crate::linalg::{Mat3, Vec3};
use crate::{Error, Result};

/// Gradients of the eight trilinear shape functions at one sample point.
///
/// This is the 9×24 mapping `vec(F) = G·u_e` in factored form: row `3d + k`
/// of `G` has entry `grads[c][k]` in column `3c + d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeGradients {
    pub grads: [Vec3; 8],
}

impl ShapeGradients {
    /// Gradients at local coordinates `xi ∈ [0,1]³` of a cube of edge `h`.
    pub fn at(xi: Vec3, h: f64) -> Self {
        let mut grads = [[0.0; 3]; 8];
        for (c, off) in CORNERS.iter().enumerate() {
            for k in 0..3 {
                let mut g = if off[k] == 1 { 1.0 / h } else { -1.0 / h };
                for d in 0..3 {
                    if d != k {
                        g *= if off[d] == 1 { xi[d] } else { 1.0 - xi[d] };
                    }
                }
                grads[c][k] = g;
            }
        }
        ShapeGradients { grads }
    }

    /// `F = G·u_e` for corner-major element coordinates.
    pub fn deformation_gradient(&self, u_e: &[f64; 24]) -> Mat3 {
        let mut f = Mat3::ZERO;
        for (c, g) in self.grads.iter().enumerate() {
            for d in 0..3 {
                let u = u_e[3 * c + d];
                for k in 0..3 {
                    f.0[d][k] += u * g[k];
                }
            }
        }
        f
    }

    /// `Gᵀ·p` for a 9-vector `p`.
    pub fn apply_transpose(&self, p: &Vec9) -> [f64; 24] {
        let mut out = [0.0; 24];
        for (c, g) in self.grads.iter().enumerate() {
            for d in 0..3 {
                out[3 * c + d] = p[3 * d] * g[0] + p[3 * d + 1] * g[1] + p[3 * d + 2] * g[2];
            }
        }
        out
    }

    /// `G·v` for a 24-vector `v`.
    pub fn apply(&self, v: &[f64; 24]) -> Vec9 {
        self.deformation_gradient(v).to_vec9()
    }

    pub fn dense(&self) -> [[f64; 24]; 9] {
        let mut g = [[0.0; 24]; 9];
        for (c, gc) in self.grads.iter().enumerate() {
            for d in 0..3 {
                for k in 0..3 {
                    g[3 * d + k][3 * c + d] = gc[k];
                }
            }
        }
        g
    }
}

/// Quadrature samples, `N` per element, element-major.
///
/// Sample `s` lives in element `s / N` and uses template `s % N`. All
/// elements are congruent cubes, so the mapping matrices depend on the
/// template only.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub per_element: usize,
    /// Local coordinates in `[0,1]³` of each template.
    pub local: Vec<Vec3>,
    pub templates: Vec<ShapeGradients>,
    /// Material-space positions of every sample.
    pub points: Vec<Vec3>,
    /// Quadrature weight `V_e / N`, shared by all samples.
    pub weight: f64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn element(&self, s: usize) -> usize {
        s / self.per_element
    }

    pub fn gradients(&self, s: usize) -> &ShapeGradients {
        &self.templates[s % self.per_element]
    }

    pub fn num_elements(&self) -> usize {
        self.len() / self.per_element
    }
}

/// Places `n` samples per element at the centers of a `k×k×k` subdivision.
pub fn build_samples(mesh: &HexMesh, n: usize) -> Result<SampleSet> {
    let k = (1..=n).find(|k| k * k * k >= n).unwrap_or(0);
    if n == 0 || k * k * k != n {
        return Err(Error::NotACube(n));
    }
    let mut local = Vec::with_capacity(n);
    for a in 0..k {
        for b in 0..k {
            for c in 0..k {
                local.push([a, b, c].map(|i| (i as f64 + 0.5) / k as f64));
            }
        }
    }
    let templates: Vec<ShapeGradients> = local.iter().map(|&xi| ShapeGradients::at(xi, mesh.h)).collect();
    let mut points = Vec::with_capacity(n * mesh.num_elements());
    for e in 0..mesh.num_elements() {
        let o = mesh.element_min_corner(e);
        for xi in &local {
            points.push([0, 1, 2].map(|d| o[d] + xi[d] * mesh.h));
        }
    }
    Ok(SampleSet { per_element: n, local, templates, points, weight: mesh.element_volume() / n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::trilinear_weights;

    #[test]
    fn non_cube_counts_are_rejected() {
        let m = HexMesh::grid([1, 1, 1], 1.0);
        for n in [0, 2, 9, 26] {
            assert!(matches!(build_samples(&m, n), Err(Error::NotACube(_))));
        }
    }

    #[test]
    fn octant_centers() {
        let m = HexMesh::grid([1, 1, 1], 2.0);
        let s = build_samples(&m, 8).unwrap();
        for p in &s.points {
            for x in p {
                assert!(*x == 0.5 || *x == 1.5);
            }
        }
        assert_eq!(s.weight, 1.0);
    }

    #[test]
    fn rest_nodes_map_to_identity() {
        let m = HexMesh::grid([2, 1, 1], 0.3);
        let u = m.rest_positions();
        for n in [1, 8, 27] {
            let s = build_samples(&m, n).unwrap();
            for i in 0..s.len() {
                let f = s.gradients(i).deformation_gradient(&m.gather(s.element(i), &u));
                assert!((f - Mat3::IDENTITY).frobenius() < 1e-12);
            }
        }
    }

    #[test]
    fn center_gradients_are_central_differences() {
        let g = ShapeGradients::at([0.5; 3], 1.0);
        for (c, off) in CORNERS.iter().enumerate() {
            for k in 0..3 {
                let sign = if off[k] == 1 { 1.0 } else { -1.0 };
                assert_eq!(g.grads[c][k], sign * 0.25);
            }
        }
    }

    #[test]
    fn dense_matches_factored_form() {
        let g = ShapeGradients::at([0.2, 0.7, 0.4], 0.5);
        let d = g.dense();
        let mut v = [0.0; 24];
        for (i, x) in v.iter_mut().enumerate() {
            *x = ((i * 7) % 13) as f64 * 0.1 - 0.6;
        }
        let f = g.apply(&v);
        for r in 0..9 {
            let dr: f64 = (0..24).map(|c| d[r][c] * v[c]).sum();
            assert!((dr - f[r]).abs() < 1e-14);
        }
        let p = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, 0.8, -0.9];
        let t = g.apply_transpose(&p);
        for c in 0..24 {
            let tc: f64 = (0..9).map(|r| d[r][c] * p[r]).sum();
            assert!((tc - t[c]).abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_match_weight_differences() {
        let xi = [0.3, 0.6, 0.8];
        let h = 0.7;
        let g = ShapeGradients::at(xi, h);
        let eps = 1e-6;
        for k in 0..3 {
            let mut a = xi;
            let mut b = xi;
            a[k] += eps;
            b[k] -= eps;
            let (wa, wb) = (trilinear_weights(a), trilinear_weights(b));
            for c in 0..8 {
                let fd = (wa[c] - wb[c]) / (2.0 * eps * h);
                assert!((fd - g.grads[c][k]).abs() < 1e-8);
            }
        }
    }
}
