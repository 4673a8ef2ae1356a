//! Fitting the latent code of an unseen pose and latent interpolation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::field::{JawParams, ParamStore, ShapeField};
use crate::linalg::Vec3;
use crate::solver::SolverConfig;
use crate::{Error, Result};

use super::adam::Adam;
use super::loss::TargetPose;
use super::scene::{backpropagate, simulate, Scene, Simulation};
use super::TrainConfig;

#[derive(Clone, Debug)]
pub struct PoseFit {
    pub z: Vec<f64>,
    pub jaw: Option<JawParams>,
    /// Loss of every iterate, starting with the initial code.
    pub losses: Vec<f64>,
    pub simulation: Simulation,
}

/// Optimizes the latent code for `target` with the network weights frozen,
/// starting from `z0` (normally the encoder output).
pub fn fit_new_pose(
    field: &ShapeField,
    scene: &Scene,
    target: &TargetPose,
    z0: &[f64],
    iterations: usize,
    config: &TrainConfig,
) -> Result<PoseFit> {
    let mut z = ParamStore::new();
    z.push("z", &[z0.len()], z0.to_vec());
    let mut adam = Adam::new(&z, config.adam);
    let mut losses = Vec::with_capacity(iterations + 1);
    let mut warm: Option<Vec<f64>> = None;
    for _ in 0..iterations {
        let sim = simulate(field, scene, z.data(0), warm.as_deref(), &config.solver)?;
        let mut scratch = field.zero_grads();
        let (value, dz) = backpropagate(field, scene, &sim, target, &config.loss, true, &mut scratch)?;
        losses.push(value.total);
        let mut g = z.zeros_like();
        g.data_mut(0).copy_from_slice(&dz);
        adam.step(&mut z, &g, config.fit_lr)?;
        warm = Some(sim.state.u);
    }
    let simulation = simulate(field, scene, z.data(0), warm.as_deref(), &config.solver)?;
    let (value, _) = super::scene::frame_loss(scene, &simulation.state.u, target, &config.loss)?;
    losses.push(value.total);
    Ok(PoseFit { z: z.data(0).to_vec(), jaw: simulation.ctx.jaw_params(), losses, simulation })
}

/// Simulates `steps + 1` shapes along the segment from `z1` to `z2`, each
/// from the rest state. The endpoints use `z1` and `z2` exactly.
pub fn interpolate(
    field: &ShapeField,
    scene: &Scene,
    z1: &[f64],
    z2: &[f64],
    steps: usize,
    solver: &SolverConfig,
) -> Result<Vec<Vec<Vec3>>> {
    if z1.len() != z2.len() {
        return Err(Error::Dimension(format!("latent codes of length {} and {}", z1.len(), z2.len())));
    }
    if steps == 0 {
        return Err(Error::InvalidInput("interpolation needs at least one step".into()));
    }
    let mut out = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let z: Vec<f64> = if i == 0 {
            z1.to_vec()
        } else if i == steps {
            z2.to_vec()
        } else {
            lerp(z1, z2, i as f64 / steps as f64)
        };
        let sim = simulate(field, scene, &z, None, solver)?;
        out.push(scene.surface_positions(&sim.state.u));
    }
    Ok(out)
}

/// Largest vertex displacement between consecutive shapes.
pub fn max_step_displacement(shapes: &[Vec<Vec3>]) -> f64 {
    shapes
        .windows(2)
        .flat_map(|w| w[0].iter().zip(w[1].iter()).map(|(a, b)| crate::linalg::norm3(crate::linalg::sub3(*a, *b))))
        .fold(0.0, f64::max)
}

/// Latent code as a flat vector, blended linearly.
pub fn lerp(z1: &[f64], z2: &[f64], t: f64) -> Vec<f64> {
    let mut z = vec![0.0; z1.len()];
    for ((o, a), b) in z.iter_mut().zip(z1.iter()).zip(z2.iter()) {
        *o = a + t * (b - a);
    }
    z
}
