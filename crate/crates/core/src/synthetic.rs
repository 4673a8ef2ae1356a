//! Synthetic scenes with known ground truth: a cantilevered bar driven by a
//! smooth actuation field, and a block whose far end is a rigid jaw.

use alloc::format;
use alloc::vec::Vec;

use crate::energy::{Domain, SampleActuation};
use crate::field::{JawParams, JawTransform};
use crate::geometry::{build_samples, embed_surface, HexMesh, NodeTag, SurfaceMesh};
use crate::kernels::ActuationParams;
use crate::linalg::{sin, Vec3};
use crate::solver::{PdSolver, SolverConfig};
use crate::training::TargetPose;
use crate::{Error, Result};

/// Known rigid jaw motion of the jaw scene.
pub const JAW_TRUTH: JawParams = JawParams([0.1, -0.05, 0.02, 0.0, 0.01]);

/// Mesh and surface of a scene, the targets, and the ground truth used to
/// make them.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub mesh: HexMesh,
    pub surface: SurfaceMesh,
    pub targets: Vec<TargetPose>,
    pub jaw_pivot: Option<Vec3>,
    pub jaw_truth: Option<JawParams>,
}

impl SyntheticScene {
    /// Bounding-box diagonal of the rest surface.
    pub fn diagonal(&self) -> f64 {
        let (lo, hi) = self.surface.bounding_box();
        crate::linalg::norm3(crate::linalg::sub3(hi, lo))
    }
}

/// A `6×2×2` hexahedral bar of spacing `h` with its `x = 0` face fixed, and
/// its boundary surface.
pub fn bar(h: f64) -> (HexMesh, SurfaceMesh) {
    let mut mesh = HexMesh::grid([6, 2, 2], h);
    mesh.tag_nodes_in_box([0.0; 3], [0.0, 2.0 * h, 2.0 * h], NodeTag::Fixed);
    let surface = SurfaceMesh::box_surface([0.0; 3], [6.0 * h, 2.0 * h, 2.0 * h], [12, 4, 4]);
    (mesh, surface)
}

/// Smooth ground-truth actuation of frame `f` of `frames` at material point
/// `x` of a bar of length `length`. Two muscle-like modes are mixed with
/// frame-dependent weights: an axial contraction growing toward the free
/// end, and a bending shear.
pub fn bar_actuation(x: Vec3, f: usize, frames: usize, length: f64) -> ActuationParams {
    let phase = 2.0 * core::f64::consts::PI * f as f64 / frames.max(1) as f64;
    let (p, q) = (0.5 + 0.5 * sin(phase), sin(phase + 1.0));
    let s = x[0] / length;
    let w = sin(core::f64::consts::PI * s);
    let height = x[2] / (length / 3.0) - 0.5;
    ActuationParams([
        -0.15 * p * s + 0.08 * q * height * w,
        0.03 * q * w,
        0.04 * p * w,
        0.05 * p * s,
        0.0,
        0.05 * p * s - 0.02 * q * w,
    ])
}

fn solve_targets(
    mesh: &HexMesh,
    surface: &SurfaceMesh,
    samples_per_element: usize,
    frames: usize,
    actuation: &dyn Fn(Vec3, usize) -> ActuationParams,
    jaw: Option<&JawTransform>,
) -> Result<Vec<TargetPose>> {
    let samples = build_samples(mesh, samples_per_element)?;
    let embedding = embed_surface(mesh, surface)?;
    let domain = Domain::new(mesh.clone(), samples);
    let solver = PdSolver::prefactor(&domain)?;
    let part = &domain.partition;
    let u_d: Vec<f64> = part
        .dirichlet
        .iter()
        .flat_map(|&n| match (jaw, mesh.tags[n]) {
            (Some(t), NodeTag::Jaw) => t.apply_point(mesh.nodes[n]),
            _ => mesh.nodes[n],
        })
        .collect();
    (0..frames)
        .map(|f| {
            let params = domain.samples.points.iter().map(|&x| actuation(x, f)).collect();
            let mut act = SampleActuation::new(params)?;
            let (state, report) = solver.solve(&domain, &mut act, &u_d, None, &SolverConfig::tight())?;
            if !report.converged {
                return Err(Error::Aborted(format!("ground-truth solve of frame {f} did not converge")));
            }
            let positions = embedding.interpolate(mesh, &state.u);
            let mut t = TargetPose::new(positions, &surface.faces, Vec::new())?;
            t.dirichlet_init = Some(u_d.clone());
            Ok(t)
        })
        .collect()
}

/// Targets of the bar driven by [`bar_actuation`], solved with
/// `samples_per_element` quadrature points.
pub fn recovery_bar(frames: usize, samples_per_element: usize) -> Result<SyntheticScene> {
    let h = 0.5;
    let (mesh, surface) = bar(h);
    let length = 6.0 * h;
    let targets = solve_targets(&mesh, &surface, samples_per_element, frames, &|x, f| bar_actuation(x, f, frames, length), None)?;
    Ok(SyntheticScene { mesh, surface, targets, jaw_pivot: None, jaw_truth: None })
}

/// A `4×2×2` block of spacing `0.5` whose `x = 0` face is fixed and whose
/// `x = 2` face is a rigid jaw moved by `theta` about a pivot at the bottom
/// of the fixed face. Actuation is the identity; only the jaw deforms the
/// block.
pub fn jaw_block(theta: JawParams, samples_per_element: usize) -> Result<SyntheticScene> {
    let h = 0.5;
    let mut mesh = HexMesh::grid([4, 2, 2], h);
    mesh.tag_nodes_in_box([0.0; 3], [0.0, 1.0, 1.0], NodeTag::Fixed);
    mesh.tag_nodes_in_box([2.0, 0.0, 0.0], [2.0, 1.0, 1.0], NodeTag::Jaw);
    let surface = SurfaceMesh::box_surface([0.0; 3], [2.0, 1.0, 1.0], [8, 4, 4]);
    let pivot = [0.0, 0.5, 0.0];
    let t = JawTransform::new(theta, pivot);
    let mut targets = solve_targets(&mesh, &surface, samples_per_element, 1, &|_, _| ActuationParams::IDENTITY, Some(&t))?;
    // The jaw must be recovered from the surface alone.
    targets.iter_mut().for_each(|t| t.dirichlet_init = None);
    Ok(SyntheticScene { mesh, surface, targets, jaw_pivot: Some(pivot), jaw_truth: Some(theta) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm3, sub3};

    #[test]
    fn bar_frames_differ_and_stay_attached() {
        let s = recovery_bar(4, 1).unwrap();
        assert_eq!(s.mesh.num_elements(), 24);
        let rest = &s.surface.vertices;
        for t in &s.targets {
            let moved = t.positions.iter().zip(rest.iter()).map(|(a, b)| norm3(sub3(*a, *b))).fold(0.0, f64::max);
            assert!(moved > 0.02 && moved < 1.0, "{moved}");
            for (p, r) in t.positions.iter().zip(rest.iter()) {
                if r[0] == 0.0 {
                    assert!(norm3(sub3(*p, *r)) < 1e-12);
                }
            }
        }
        let d = s.targets[0].positions.iter().zip(s.targets[2].positions.iter()).map(|(a, b)| norm3(sub3(*a, *b)));
        assert!(d.fold(0.0, f64::max) > 0.02);
    }

    #[test]
    fn jaw_face_follows_the_transform() {
        let s = jaw_block(JAW_TRUTH, 1).unwrap();
        let t = JawTransform::new(JAW_TRUTH, s.jaw_pivot.unwrap());
        for (p, r) in s.targets[0].positions.iter().zip(s.surface.vertices.iter()) {
            if r[0] == 2.0 {
                assert!(norm3(sub3(*p, t.apply_point(*r))) < 1e-12);
            }
        }
    }
}
