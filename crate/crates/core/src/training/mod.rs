//! Losses, optimizer and the two training stages, plus pose fitting and
//! latent interpolation.
//!
//! Stage 1 ([`pretrain`]) fits the networks to actuation matrices read off a
//! spring-drag solve of every target, without the simulator. Stage 2
//! ([`train_stage2`]) runs every frame through the quasi-static solver and
//! back through the adjoint into the network parameters.

mod adam;
mod finetune;
mod loss;
mod pca;
mod pose;
mod pretrain;
mod scene;

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::field::LatentSource;
use crate::solver::SolverConfig;

pub use adam::{linear_decay, Adam, AdamConfig};
pub use finetune::{evaluate, train_stage2, FrameOutcome, WarmStarts};
pub use loss::{
    mean_vertex_error, smooth_abs, state_loss, surface_loss, vertex_errors, LossConfig, PositionPenalty, SurfaceLoss,
    TargetPose, SMOOTH_L1_DELTA,
};
pub use pca::{PcaBasis, DEFAULT_COMPONENTS};
pub use pose::{fit_new_pose, interpolate, lerp, max_step_displacement, PoseFit};
pub use pretrain::{actuation_targets, pretrain, project_spd, ActuationTargets, DRAG_RESIDUAL, SPD_FLOOR};
pub use scene::{backpropagate, frame_loss, simulate, Scene, Simulation};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub adam: AdamConfig,
    pub fit_iterations: usize,
    pub fit_lr: f64,
    /// Whether simulator gradients reach the jaw network.
    pub jaw_gradients: bool,
    pub solver: SolverConfig,
    /// Fraction of failed frames per epoch that aborts stage 2.
    pub max_failed_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            stage1: StageConfig { epochs: 1700, batch: 4, lr: 2e-4 },
            stage2: StageConfig { epochs: 30, batch: 1, lr: 1e-4 },
            adam: AdamConfig::default(),
            fit_iterations: 10,
            fit_lr: 1e-2,
            jaw_gradients: true,
            solver: SolverConfig::refined(),
            max_failed_fraction: 0.2,
            seed: 0,
        }
    }
}

/// One training example: target shape and where its latent code comes
/// from.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingFrame {
    pub target: TargetPose,
    pub source: LatentSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Simulator,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Pretrain => 1,
            Stage::Simulator => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub stage: Stage,
    pub loss: f64,
    pub position: f64,
    pub normal: f64,
    /// Mean embedded-vertex distance to the targets; NaN in stage 1.
    pub mean_vertex_error: f64,
    pub solver_iterations: usize,
    pub failed_frames: usize,
    pub wall_time_seconds: Option<f64>,
}

/// Shuffled batches of one epoch, reproducible from the seed.
fn batches<T: Copy>(items: &[T], size: usize, seed: u64, stage: u64, epoch: usize) -> Vec<Vec<T>> {
    let mut order = items.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (stage << 56) ^ epoch as u64);
    order.shuffle(&mut rng);
    order.chunks(size.max(1)).map(|c| c.to_vec()).collect()
}

#[cfg(feature = "std")]
type Timer = std::time::Instant;
#[cfg(not(feature = "std"))]
type Timer = ();

fn start_timer() -> Timer {
    #[cfg(feature = "std")]
    {
        std::time::Instant::now()
    }
}

#[allow(clippy::unnecessary_wraps, unused_variables)]
fn elapsed_since(t: Timer) -> Option<f64> {
    #[cfg(feature = "std")]
    {
        Some(t.elapsed().as_secs_f64())
    }
    #[cfg(not(feature = "std"))]
    {
        None
    }
}
