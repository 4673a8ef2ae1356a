//! Surface matching loss: per-coordinate position error plus a normal
//! alignment term, with exact gradients with respect to surface vertices.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::{vertex_normals, Embedding, HexMesh};
use crate::linalg::{add3, cross3, dot3, norm3, scale3, sub3, Vec3};
use crate::{Error, Result};

/// Width of the quadratic region of the smoothed absolute value.
pub const SMOOTH_L1_DELTA: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PositionPenalty {
    /// `Σ|ŝ − s|` per coordinate, quadratic below [`SMOOTH_L1_DELTA`].
    #[default]
    SmoothL1,
    /// `Σ‖ŝ − s‖²`.
    SquaredL2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the normal term.
    pub alpha: f64,
    pub penalty: PositionPenalty,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.0, penalty: PositionPenalty::SmoothL1 }
    }
}

/// Loss value, its two terms and `∂L/∂ŝ` per surface vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceLoss {
    pub total: f64,
    pub position: f64,
    pub normal: f64,
    pub grad: Vec<Vec3>,
}

/// Smoothed `|x|` (Huber): `x²/2δ` for `|x| < δ`, `|x| − δ/2` outside.
/// Returns the value and its derivative.
pub fn smooth_abs(x: f64) -> (f64, f64) {
    let ax = x.abs();
    if ax >= SMOOTH_L1_DELTA {
        (ax - 0.5 * SMOOTH_L1_DELTA, x.signum())
    } else {
        (x * x / (2.0 * SMOOTH_L1_DELTA), x / SMOOTH_L1_DELTA)
    }
}

/// Evaluates the loss of predicted positions `pred` against target
/// positions and unit normals on a shared triangulation.
pub fn surface_loss(
    pred: &[Vec3],
    target: &[Vec3],
    target_normals: &[Vec3],
    faces: &[[usize; 3]],
    config: &LossConfig,
) -> Result<SurfaceLoss> {
    if pred.len() != target.len() || (config.alpha != 0.0 && target_normals.len() != target.len()) {
        return Err(Error::Dimension(alloc::format!(
            "{} predicted vertices, {} targets, {} normals",
            pred.len(),
            target.len(),
            target_normals.len()
        )));
    }
    let mut grad = vec![[0.0; 3]; pred.len()];
    let mut position = 0.0;
    for ((p, t), g) in pred.iter().zip(target.iter()).zip(grad.iter_mut()) {
        for d in 0..3 {
            let r = p[d] - t[d];
            match config.penalty {
                PositionPenalty::SmoothL1 => {
                    let (v, dv) = smooth_abs(r);
                    position += v;
                    g[d] = dv;
                }
                PositionPenalty::SquaredL2 => {
                    position += r * r;
                    g[d] = 2.0 * r;
                }
            }
        }
    }
    let mut normal = 0.0;
    if config.alpha != 0.0 {
        // Unnormalized area-weighted normals m_i = Σ_f (b − a)×(c − a).
        let mut m = vec![[0.0; 3]; pred.len()];
        for (f, tri) in faces.iter().enumerate() {
            let [a, b, c] = tri.map(|i| pred[i]);
            let n = cross3(sub3(b, a), sub3(c, a));
            if norm3(n) == 0.0 {
                return Err(Error::DegenerateFace(f));
            }
            for &i in tri {
                m[i] = add3(m[i], n);
            }
        }
        // ∂L/∂m_i for L = α Σ (1 − m̂_i·n_i).
        let mut dm = vec![[0.0; 3]; pred.len()];
        for i in 0..pred.len() {
            let l = norm3(m[i]);
            if l == 0.0 {
                continue;
            }
            let mh = scale3(m[i], 1.0 / l);
            let c = dot3(mh, target_normals[i]);
            normal += 1.0 - c;
            let dc = scale3(sub3(target_normals[i], scale3(mh, c)), 1.0 / l);
            dm[i] = scale3(dc, -config.alpha);
        }
        normal *= config.alpha;
        for tri in faces {
            let [a, b, c] = tri.map(|i| pred[i]);
            let gsum = tri.iter().fold([0.0; 3], |acc, &i| add3(acc, dm[i]));
            let db = cross3(sub3(c, a), gsum);
            let dc = cross3(gsum, sub3(b, a));
            grad[tri[1]] = add3(grad[tri[1]], db);
            grad[tri[2]] = add3(grad[tri[2]], dc);
            grad[tri[0]] = sub3(grad[tri[0]], add3(db, dc));
        }
    }
    Ok(SurfaceLoss { total: position + normal, position, normal, grad })
}

/// A target shape: surface positions, their normals and an optional
/// shape descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetPose {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub descriptor: Vec<f64>,
    /// Initial guess for the Dirichlet positions, row-major over Dirichlet
    /// nodes.
    pub dirichlet_init: Option<Vec<f64>>,
}

impl TargetPose {
    /// Builds a target with normals recomputed from `positions`.
    pub fn new(positions: Vec<Vec3>, faces: &[[usize; 3]], descriptor: Vec<f64>) -> Result<Self> {
        if positions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("target positions".into()));
        }
        let normals = vertex_normals(&positions, faces)?;
        Ok(TargetPose { positions, normals, descriptor, dirichlet_init: None })
    }
}

/// Loss of a simulated state `u` against a target, with the gradient
/// pulled back to every nodal degree of freedom.
pub fn state_loss(
    mesh: &HexMesh,
    embedding: &Embedding,
    faces: &[[usize; 3]],
    u: &[f64],
    target: &TargetPose,
    config: &LossConfig,
) -> Result<(SurfaceLoss, Vec<f64>)> {
    let pred = embedding.interpolate(mesh, u);
    let loss = surface_loss(&pred, &target.positions, &target.normals, faces, config)?;
    let du = embedding.pullback(mesh, &loss.grad);
    Ok((loss, du))
}

/// Mean Euclidean distance between corresponding vertices.
pub fn mean_vertex_error(pred: &[Vec3], target: &[Vec3]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(target.iter()).map(|(a, b)| norm3(sub3(*a, *b))).sum::<f64>() / pred.len() as f64
}

/// Euclidean distance per vertex.
pub fn vertex_errors(pred: &[Vec3], target: &[Vec3]) -> Vec<f64> {
    pred.iter().zip(target.iter()).map(|(a, b)| norm3(sub3(*a, *b))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SurfaceMesh;

    fn patch() -> SurfaceMesh {
        SurfaceMesh::box_surface([0.0; 3], [1.0, 1.0, 1.0], [1, 1, 1])
    }

    #[test]
    fn exact_match_has_zero_loss_and_gradient() {
        let s = patch();
        let t = TargetPose::new(s.vertices.clone(), &s.faces, vec![]).unwrap();
        let cfg = LossConfig { alpha: 1.0, penalty: PositionPenalty::SmoothL1 };
        let l = surface_loss(&s.vertices, &t.positions, &t.normals, &s.faces, &cfg).unwrap();
        assert_eq!(l.position, 0.0);
        assert!(l.normal.abs() < 1e-13);
        assert!(l.grad.iter().flatten().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn uniform_shift_costs_shift_per_vertex() {
        let s = patch();
        let t = TargetPose::new(s.vertices.clone(), &s.faces, vec![]).unwrap();
        let shifted: Vec<Vec3> = s.vertices.iter().map(|v| [v[0] + 0.25, v[1], v[2]]).collect();
        let l = surface_loss(&shifted, &t.positions, &t.normals, &s.faces, &LossConfig::default()).unwrap();
        let expected = s.vertices.len() as f64 * (0.25 - 0.5 * SMOOTH_L1_DELTA);
        assert!((l.total - expected).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = patch();
        let target: Vec<Vec3> =
            s.vertices.iter().enumerate().map(|(i, v)| [v[0] * 1.1, v[1] + 0.05 * i as f64, v[2] - 0.1]).collect();
        let t = TargetPose::new(target, &s.faces, vec![]).unwrap();
        let pred: Vec<Vec3> = s
            .vertices
            .iter()
            .enumerate()
            .map(|(i, v)| [v[0] + 0.03 * (i % 3) as f64, v[1] * 0.9 + 0.01, v[2] + 0.02 * (i % 2) as f64])
            .collect();
        for penalty in [PositionPenalty::SmoothL1, PositionPenalty::SquaredL2] {
            let cfg = LossConfig { alpha: 1.0, penalty };
            let l = surface_loss(&pred, &t.positions, &t.normals, &s.faces, &cfg).unwrap();
            let eps = 1e-7;
            for i in 0..pred.len() {
                for d in 0..3 {
                    let mut p = pred.clone();
                    p[i][d] += eps;
                    let lp = surface_loss(&p, &t.positions, &t.normals, &s.faces, &cfg).unwrap().total;
                    p[i][d] -= 2.0 * eps;
                    let lm = surface_loss(&p, &t.positions, &t.normals, &s.faces, &cfg).unwrap().total;
                    let fd = (lp - lm) / (2.0 * eps);
                    assert!((l.grad[i][d] - fd).abs() < 1e-4 * fd.abs().max(1.0), "{i},{d}: {} vs {fd}", l.grad[i][d]);
                }
            }
        }
    }

    #[test]
    fn degenerate_face_is_reported() {
        let s = patch();
        let mut pred = s.vertices.clone();
        let [a, b, _] = s.faces[3];
        pred[b] = pred[a];
        let cfg = LossConfig { alpha: 1.0, penalty: PositionPenalty::SmoothL1 };
        let t = TargetPose::new(s.vertices.clone(), &s.faces, vec![]).unwrap();
        assert!(matches!(surface_loss(&pred, &t.positions, &t.normals, &s.faces, &cfg), Err(Error::DegenerateFace(_))));
    }
}
