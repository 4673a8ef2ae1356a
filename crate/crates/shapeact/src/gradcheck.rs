//! Adjoint versus central-difference gradients of the training loss with
//! respect to every network parameter, through the full quasi-static solve.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use shapeact_core::field::{EncoderConfig, FieldConfig, JawConfig, LatentSource, ResolutionConfig, ShapeField};
use shapeact_core::geometry::{HexMesh, NodeTag, SurfaceMesh};
use shapeact_core::solver::SolverConfig;
use shapeact_core::training::{backpropagate, frame_loss, simulate, LossConfig, PositionPenalty, Scene, TargetPose};

use crate::Result;

pub const TOLERANCE: f64 = 1e-3;
pub const STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradEntry {
    pub parameter: String,
    pub index: usize,
    pub analytic: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub scale: String,
    pub step: f64,
    pub tolerance: f64,
    pub loss: f64,
    pub max_relative_error: f64,
    pub passed: bool,
    pub entries: Vec<GradEntry>,
}

/// One hexahedron with its `x = 0` face fixed and two jaw-driven nodes, a
/// width-8 field with resolution and jaw branches, and a sheared target.
pub fn tiny_problem(seed: u64) -> Result<(ShapeField, Scene, TargetPose)> {
    let mut mesh = HexMesh::grid([1, 1, 1], 1.0);
    mesh.tag_nodes_in_box([0.0; 3], [0.0, 1.0, 1.0], NodeTag::Fixed);
    mesh.tag_nodes_in_box([1.0, 0.0, 0.0], [1.0, 0.0, 1.0], NodeTag::Jaw);
    let surface = SurfaceMesh::box_surface([0.0; 3], [1.0; 3], [2, 2, 2]);
    let scene = Scene::new(mesh, surface, 8)?;

    let mut cfg = FieldConfig::new(EncoderConfig::Descriptor { dim: 2, hidden: 4 }, [0.0; 3], [1.0; 3]);
    cfg.width = 8;
    cfg.latent_dim = 3;
    cfg.modulation_hidden = 5;
    cfg.resolution = Some(ResolutionConfig { hidden: 4, reference_count: 8.0 });
    cfg.jaw = Some(JawConfig { hidden: 4, pivot: [0.0, 0.0, 0.5] });
    let mut field = ShapeField::new(cfg, seed)?;
    // Move the zero-initialized output layers off zero so every parameter
    // has a nonzero gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..field.params().len() {
        let name = field.params().tensor(t).name.clone();
        let scale = if name.starts_with("act.out") || name.starts_with("jaw.fc2") {
            0.05
        } else if name.starts_with("act.l") {
            0.0
        } else {
            0.3
        };
        for x in field.params_mut().data_mut(t) {
            *x += scale * rng.random_range(-1.0..1.0);
        }
    }
    let pos = scene
        .surface
        .vertices
        .iter()
        .map(|v| [v[0] * 1.05 + 0.02 * v[1], v[1] - 0.03 * v[0] * v[2], v[2] + 0.04 * v[0]])
        .collect();
    let target = TargetPose::new(pos, &scene.surface.faces, vec![0.3, -0.2])?;
    Ok((field, scene, target))
}

fn loss_of(field: &ShapeField, scene: &Scene, target: &TargetPose, source: &LatentSource, cfg: &LossConfig) -> Result<f64> {
    let z = field.encode(source.clone())?;
    let sim = simulate(field, scene, &z.z, None, &SolverConfig::tight())?;
    Ok(frame_loss(scene, &sim.state.u, target, cfg)?.0.total)
}

/// Compares every parameter's adjoint gradient against a central
/// difference with step [`STEP`]. The relative error of an entry is
/// `|a − f| / max(|f|, 1e-3·max_j |f_j|)`.
pub fn check(
    field: &mut ShapeField,
    scene: &Scene,
    target: &TargetPose,
    source: &LatentSource,
    cfg: &LossConfig,
    scale: &str,
) -> Result<GradcheckReport> {
    let z = field.encode(source.clone())?;
    let sim = simulate(field, scene, &z.z, None, &SolverConfig::tight())?;
    let mut grads = field.zero_grads();
    let (value, dz) = backpropagate(field, scene, &sim, target, cfg, true, &mut grads)?;
    field.backward_encode(&z, &dz, &mut grads)?;
    let analytic = grads.flatten();
    let mut fd = Vec::with_capacity(analytic.len());
    for i in 0..analytic.len() {
        let (t, off) = field.params().locate(i).expect("flat index in range");
        let x0 = field.params().data(t)[off];
        field.params_mut().data_mut(t)[off] = x0 + STEP;
        let lp = loss_of(field, scene, target, source, cfg);
        field.params_mut().data_mut(t)[off] = x0 - STEP;
        let lm = loss_of(field, scene, target, source, cfg);
        field.params_mut().data_mut(t)[off] = x0;
        fd.push((lp? - lm?) / (2.0 * STEP));
    }
    let floor = 1e-3 * fd.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let entries: Vec<GradEntry> = (0..analytic.len())
        .map(|i| {
            let (t, off) = field.params().locate(i).expect("flat index in range");
            GradEntry {
                parameter: field.params().tensor(t).name.clone(),
                index: off,
                analytic: analytic[i],
                finite_difference: fd[i],
                relative_error: (analytic[i] - fd[i]).abs() / fd[i].abs().max(floor).max(f64::MIN_POSITIVE),
            }
        })
        .collect();
    let max = entries.iter().map(|e| e.relative_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        scale: scale.into(),
        step: STEP,
        tolerance: TOLERANCE,
        loss: value.total,
        max_relative_error: max,
        passed: max < TOLERANCE,
        entries,
    })
}

pub fn tiny(seed: u64) -> Result<GradcheckReport> {
    let (mut field, scene, target) = tiny_problem(seed)?;
    let source = LatentSource::Descriptor(target.descriptor.clone());
    let cfg = LossConfig { alpha: 1.0, penalty: PositionPenalty::SquaredL2 };
    check(&mut field, &scene, &target, &source, &cfg, "tiny")
}
