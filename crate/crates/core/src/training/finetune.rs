//! Stage 2: training through the simulator.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::field::ShapeField;
use crate::{Error, Result};

use super::adam::{linear_decay, Adam};
use super::loss::mean_vertex_error;
use super::scene::{backpropagate, simulate, Scene};
use super::{batches, elapsed_since, start_timer, EpochMetrics, Stage, TrainConfig, TrainingFrame};

/// Warm-start states carried between epochs, one per (scene, frame).
#[derive(Clone, Debug, Default)]
pub struct WarmStarts {
    states: Vec<Vec<Option<Vec<f64>>>>,
}

impl WarmStarts {
    pub fn new(scenes: usize, frames: usize) -> Self {
        WarmStarts { states: vec![vec![None; frames]; scenes] }
    }

    pub fn get(&self, scene: usize, frame: usize) -> Option<&[f64]> {
        self.states.get(scene)?.get(frame)?.as_deref()
    }

    fn set(&mut self, scene: usize, frame: usize, u: Vec<f64>) {
        self.states[scene][frame] = Some(u);
    }
}

/// Per-frame outcome of one stage-2 evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutcome {
    pub loss: f64,
    pub position: f64,
    pub normal: f64,
    pub mean_vertex_error: f64,
    pub iterations: usize,
}

/// Stage-2 training over every (scene, frame) pair. A frame whose solve or
/// adjoint fails is skipped; more than `max_failed_fraction` failures in
/// one epoch abort training.
#[allow(clippy::too_many_arguments)]
pub fn train_stage2(
    field: &mut ShapeField,
    adam: &mut Adam,
    scenes: &[Scene],
    frames: &[TrainingFrame],
    config: &TrainConfig,
    start_epoch: usize,
    warm: &mut WarmStarts,
    observer: &mut dyn FnMut(&EpochMetrics, &ShapeField, &Adam) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    let stage = &config.stage2;
    let items: Vec<(usize, usize)> = (0..scenes.len()).flat_map(|r| (0..frames.len()).map(move |f| (r, f))).collect();
    if warm.states.len() != scenes.len() || warm.states.iter().any(|s| s.len() != frames.len()) {
        *warm = WarmStarts::new(scenes.len(), frames.len());
    }
    let mut metrics = Vec::new();
    if items.is_empty() {
        return Ok(metrics);
    }
    for epoch in start_epoch..stage.epochs {
        let timer = start_timer();
        let lr = linear_decay(stage.lr, epoch, stage.epochs);
        let (mut loss, mut position, mut normal, mut err, mut iters, mut failed, mut done) = (0.0, 0.0, 0.0, 0.0, 0, 0, 0);
        for batch in batches(&items, stage.batch, config.seed, 2, epoch) {
            let mut grads = field.zero_grads();
            let mut used = 0;
            for &(r, f) in &batch {
                let scene = &scenes[r];
                let frame = &frames[f];
                let latent = field.encode(frame.source.clone())?;
                let step = simulate(field, scene, &latent.z, warm.get(r, f), &config.solver).and_then(|sim| {
                    let mut g = field.zero_grads();
                    let (value, dz) =
                        backpropagate(field, scene, &sim, &frame.target, &config.loss, config.jaw_gradients, &mut g)?;
                    field.backward_encode(&latent, &dz, &mut g)?;
                    Ok((sim, value, g))
                });
                match step {
                    Ok((sim, value, g)) => {
                        grads.add_scaled(&g, 1.0);
                        used += 1;
                        loss += value.total;
                        position += value.position;
                        normal += value.normal;
                        err += mean_vertex_error(&scene.surface_positions(&sim.state.u), &frame.target.positions);
                        iters += sim.report.iterations;
                        warm.set(r, f, sim.state.u);
                    }
                    Err(e) if e.kind() == crate::ErrorKind::Numerical => {
                        log::warn!("epoch {epoch}: frame {f} at resolution {} skipped: {e}", scene.resolution());
                        failed += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            done += batch.len();
            if failed as f64 > config.max_failed_fraction * items.len() as f64 {
                return Err(Error::Aborted(format!(
                    "{failed} of {done} frames failed in epoch {epoch}, above the {} limit",
                    config.max_failed_fraction
                )));
            }
            if used > 0 {
                grads.scale(1.0 / used as f64);
                let mut params = field.params().clone();
                adam.step(&mut params, &grads, lr)?;
                field.set_params(params)?;
            }
        }
        let ok = (items.len() - failed).max(1) as f64;
        let m = EpochMetrics {
            epoch,
            stage: Stage::Simulator,
            loss: loss / ok,
            position: position / ok,
            normal: normal / ok,
            mean_vertex_error: err / ok,
            solver_iterations: iters,
            failed_frames: failed,
            wall_time_seconds: elapsed_since(timer),
        };
        observer(&m, field, adam)?;
        metrics.push(m);
    }
    Ok(metrics)
}

/// Evaluates every frame without updating anything.
pub fn evaluate(field: &ShapeField, scene: &Scene, frames: &[TrainingFrame], config: &TrainConfig) -> Result<Vec<FrameOutcome>> {
    frames
        .iter()
        .map(|frame| {
            let latent = field.encode(frame.source.clone())?;
            let sim = simulate(field, scene, &latent.z, None, &config.solver)?;
            let (value, _) = super::scene::frame_loss(scene, &sim.state.u, &frame.target, &config.loss)?;
            Ok(FrameOutcome {
                loss: value.total,
                position: value.position,
                normal: value.normal,
                mean_vertex_error: mean_vertex_error(&scene.surface_positions(&sim.state.u), &frame.target.positions),
                iterations: sim.report.iterations,
            })
        })
        .collect()
}
