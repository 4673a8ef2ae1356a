//! Stage 1: actuation targets from a spring-drag solve and supervised
//! pretraining of the networks against them.

use alloc::format;
use alloc::vec::Vec;

use crate::energy::SampleActuation;
use crate::field::{ShapeField, ShapeContext};
use crate::kernels::{actuation_from_params, chain_actuation_gradient, ActuationParams};
use crate::linalg::{norm3, sub3, symmetric_eigen3, Mat3, Vec3};
use crate::solver::{PdSolver, SolveReport, SolverConfig, Springs};
use crate::{Error, Result};

use super::adam::{linear_decay, Adam};
use super::loss::TargetPose;
use super::scene::Scene;
use super::{batches, elapsed_since, start_timer, EpochMetrics, Stage, TrainConfig, TrainingFrame};

/// Smallest eigenvalue kept when projecting actuation targets to SPD.
pub const SPD_FLOOR: f64 = 1e-3;
/// Largest acceptable drag residual relative to the target displacement.
pub const DRAG_RESIDUAL: f64 = 0.01;
const DRAG_ESCALATIONS: usize = 6;

/// Stage-1 actuation targets of one frame at one resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ActuationTargets {
    pub params: Vec<ActuationParams>,
    pub stiffness: f64,
    /// Mean spring residual over mean target displacement.
    pub residual: f64,
    pub projected: usize,
}

/// Nearest symmetric matrix with eigenvalues at least [`SPD_FLOOR`].
/// Returns the matrix and whether anything was clamped.
pub fn project_spd(m: &Mat3) -> (Mat3, bool) {
    let sym = (*m + m.transpose()).scale(0.5);
    let (vals, vecs) = symmetric_eigen3(&sym);
    let clamped = vals.iter().any(|&v| v < SPD_FLOOR);
    if !clamped {
        return (sym, false);
    }
    let d = Mat3::from_diag(vals.map(|v| v.max(SPD_FLOOR)));
    (vecs * d * vecs.transpose(), true)
}

fn mean_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b.iter()).map(|(p, q)| norm3(sub3(*p, *q))).sum::<f64>() / a.len() as f64
}

/// Drags the mesh at `A = I` onto the target with zero-rest-length springs
/// on the embedded surface, then reads off the symmetric polar factor of
/// every sample's deformation gradient. The stiffness starts at ten
/// element volumes and grows tenfold until the residual is within
/// [`DRAG_RESIDUAL`] of the target displacement.
pub fn actuation_targets(scene: &Scene, target: &TargetPose, solver: &SolverConfig) -> Result<(ActuationTargets, SolveReport)> {
    let domain = &scene.domain;
    let rest = scene.rest_surface();
    let displacement = mean_distance(&rest, &target.positions);
    let u_d = match &target.dirichlet_init {
        Some(d) if d.len() == 3 * domain.partition.dirichlet.len() => d.clone(),
        Some(d) => return Err(Error::Dimension(format!("{} Dirichlet values in target", d.len()))),
        None => scene.dirichlet_positions(None),
    };
    let mut stiffness = 10.0 * domain.mesh.element_volume();
    let mut last = None;
    for attempt in 0..DRAG_ESCALATIONS {
        let springs = Springs { embedding: scene.embedding.clone(), targets: target.positions.clone(), stiffness };
        let solver_k = PdSolver::with_springs(domain, springs)?;
        let mut act = SampleActuation::identity(domain.samples.len());
        let (state, report) = solver_k.solve(domain, &mut act, &u_d, None, solver)?;
        if !report.converged {
            log::warn!("spring drag did not converge at stiffness {stiffness:e}; using the last iterate");
        }
        let residual = if displacement > 0.0 {
            mean_distance(&scene.surface_positions(&state.u), &target.positions) / displacement
        } else {
            0.0
        };
        last = Some((state, report, residual, stiffness));
        if residual <= DRAG_RESIDUAL {
            break;
        }
        if attempt + 1 < DRAG_ESCALATIONS {
            stiffness *= 10.0;
        }
    }
    let (state, report, residual, stiffness) = last.expect("at least one drag attempt");
    if residual > DRAG_RESIDUAL {
        log::warn!("spring drag residual {residual:.3e} above {DRAG_RESIDUAL} at the largest stiffness");
    }
    let mut projected = 0;
    let params = (0..domain.samples.len())
        .map(|s| {
            let e = domain.samples.element(s);
            let f = domain.samples.gradients(s).deformation_gradient(&domain.mesh.gather(e, &state.u));
            let polar = crate::kernels::polar_decompose(&f);
            let (a, clamped) = project_spd(&polar.s);
            projected += clamped as usize;
            ActuationParams::from_matrix(&a)
        })
        .collect();
    if projected > 0 {
        log::info!("{projected} actuation targets projected to SPD");
    }
    Ok((ActuationTargets { params, stiffness, residual, projected }, report))
}

/// Pretraining loss of one frame: mean squared Frobenius distance of the
/// actuation matrices plus, when jaw targets exist, the mean squared jaw
/// position error. Gradients are accumulated with weight `scale`.
fn frame_pretrain(
    field: &ShapeField,
    scene: &Scene,
    ctx: &ShapeContext,
    targets: &ActuationTargets,
    pose: &TargetPose,
    scale: f64,
    grads: &mut crate::field::ParamStore,
) -> Result<(f64, Vec<f64>)> {
    let batch = field.forward_actuation(ctx, scene.sample_points())?;
    let n = batch.params.len().max(1) as f64;
    let mut loss = 0.0;
    let grad_b: Vec<[f64; 6]> = batch
        .params
        .iter()
        .zip(targets.params.iter())
        .map(|(b, t)| {
            let d = actuation_from_params(b) - actuation_from_params(t);
            loss += d.frobenius_sq() / n;
            chain_actuation_gradient(&d.scale(2.0 * scale / n).to_vec9())
        })
        .collect();
    let mut grad_jaw = None;
    if let (Some(jaw), Some(init)) = (field.jaw(ctx), &pose.dirichlet_init) {
        if scene.has_jaw_nodes() {
            let rest = scene.jaw_rest_points();
            let want = scene.jaw_values(init);
            let moved = jaw.apply(&rest);
            let m = rest.len() as f64;
            let g: Vec<Vec3> = moved
                .iter()
                .zip(want.iter())
                .map(|(a, b)| {
                    let d = sub3(*a, *b);
                    loss += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) / m;
                    d.map(|x| 2.0 * scale * x / m)
                })
                .collect();
            grad_jaw = Some(jaw.vjp(&rest, &g));
        }
    }
    let dz = field.backward(ctx, Some((&batch, &grad_b)), grad_jaw.as_ref(), grads)?;
    Ok((loss, dz))
}

/// Stage-1 training. `targets[r][f]` holds the actuation targets of frame
/// `f` in scene `r`. `observer` runs after every epoch.
#[allow(clippy::too_many_arguments)]
pub fn pretrain(
    field: &mut ShapeField,
    adam: &mut Adam,
    scenes: &[Scene],
    frames: &[TrainingFrame],
    targets: &[Vec<ActuationTargets>],
    config: &TrainConfig,
    start_epoch: usize,
    observer: &mut dyn FnMut(&EpochMetrics, &ShapeField, &Adam) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    if targets.len() != scenes.len() || targets.iter().any(|t| t.len() != frames.len()) {
        return Err(Error::Dimension("actuation targets must cover every scene and frame".into()));
    }
    let stage = &config.stage1;
    let items: Vec<(usize, usize)> = (0..scenes.len()).flat_map(|r| (0..frames.len()).map(move |f| (r, f))).collect();
    let mut metrics = Vec::new();
    let mut reference: Option<f64> = None;
    let mut above = 0;
    for epoch in start_epoch..stage.epochs {
        let timer = start_timer();
        let lr = linear_decay(stage.lr, epoch, stage.epochs);
        let mut total = 0.0;
        for batch in batches(&items, stage.batch, config.seed, 1, epoch) {
            let mut grads = field.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &(r, f) in &batch {
                let frame = &frames[f];
                let latent = field.encode(frame.source.clone())?;
                let ctx = field.shape(&latent.z, Some(scenes[r].resolution()))?;
                let (loss, dz) = frame_pretrain(field, &scenes[r], &ctx, &targets[r][f], &frame.target, scale, &mut grads)?;
                field.backward_encode(&latent, &dz, &mut grads)?;
                total += loss;
            }
            let mut params = field.params().clone();
            adam.step(&mut params, &grads, lr)?;
            field.set_params(params)?;
        }
        let loss = if items.is_empty() { 0.0 } else { total / items.len() as f64 };
        if !loss.is_finite() {
            return Err(Error::Aborted(format!("stage-1 loss became non-finite at epoch {epoch}")));
        }
        let r = *reference.get_or_insert(loss);
        above = if loss > 10.0 * r.max(1e-12) { above + 1 } else { 0 };
        let m = EpochMetrics {
            epoch,
            stage: Stage::Pretrain,
            loss,
            position: loss,
            normal: 0.0,
            mean_vertex_error: f64::NAN,
            solver_iterations: 0,
            failed_frames: 0,
            wall_time_seconds: elapsed_since(timer),
        };
        observer(&m, field, adam)?;
        metrics.push(m);
        if above >= 3 {
            return Err(Error::Aborted(format!(
                "stage-1 loss {loss:e} exceeded ten times the initial {r:e} for three consecutive epochs"
            )));
        }
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_keeps_spd_and_fixes_negative() {
        let m = Mat3([[2.0, 0.1, 0.0], [0.1, 1.0, 0.0], [0.0, 0.0, 0.5]]);
        let (p, c) = project_spd(&m);
        assert!(!c);
        assert_eq!(p, m);
        let bad = Mat3([[1.0, 0.0, 0.0], [0.0, -0.5, 0.0], [0.0, 0.0, 2.0]]);
        let (p, c) = project_spd(&bad);
        assert!(c);
        assert!((p.0[1][1] - SPD_FLOOR).abs() < 1e-12);
        assert!((p.0[0][0] - 1.0).abs() < 1e-12 && (p.0[2][2] - 2.0).abs() < 1e-12);
    }
}
