//! A simulation scene and the forward/backward pass of one frame through
//! field, solver and loss.

use alloc::format;
use alloc::vec::Vec;

use crate::adjoint::{grad_actuation, grad_dirichlet, Sensitivity};
use crate::energy::{Domain, SampleActuation};
use crate::field::{ActuationBatch, JawTransform, ParamStore, ShapeContext, ShapeField};
use crate::geometry::{build_samples, embed_surface, Embedding, HexMesh, NodeTag, SurfaceMesh};
use crate::linalg::Vec3;
use crate::solver::{PdSolver, QuasiStaticState, SolveReport, SolverConfig};
use crate::{Error, Result};

use super::loss::{state_loss, LossConfig, SurfaceLoss, TargetPose};

/// Mesh, quadrature, prefactored solver and surface embedding at one
/// sampling resolution.
#[derive(Clone, Debug)]
pub struct Scene {
    pub domain: Domain,
    pub solver: PdSolver,
    pub surface: SurfaceMesh,
    pub embedding: Embedding,
    /// Positions in the Dirichlet list that follow the jaw transform.
    jaw_slots: Vec<usize>,
}

impl Scene {
    pub fn new(mesh: HexMesh, surface: SurfaceMesh, samples_per_element: usize) -> Result<Self> {
        let samples = build_samples(&mesh, samples_per_element)?;
        let embedding = embed_surface(&mesh, &surface)?;
        let domain = Domain::new(mesh, samples);
        Self::from_domain(domain, surface, embedding)
    }

    pub fn from_domain(domain: Domain, surface: SurfaceMesh, embedding: Embedding) -> Result<Self> {
        if embedding.num_vertices() != surface.num_vertices() {
            return Err(Error::Dimension(format!(
                "embedding covers {} vertices, surface has {}",
                embedding.num_vertices(),
                surface.num_vertices()
            )));
        }
        let solver = PdSolver::prefactor(&domain)?;
        let jaw_slots = domain
            .partition
            .dirichlet
            .iter()
            .enumerate()
            .filter(|(_, &n)| domain.mesh.tags[n] == NodeTag::Jaw)
            .map(|(i, _)| i)
            .collect();
        Ok(Scene { domain, solver, surface, embedding, jaw_slots })
    }

    /// Total sample count, the resolution fed to the field.
    pub fn resolution(&self) -> f64 {
        self.domain.samples.len() as f64
    }

    pub fn sample_points(&self) -> &[Vec3] {
        &self.domain.samples.points
    }

    pub fn has_jaw_nodes(&self) -> bool {
        !self.jaw_slots.is_empty()
    }

    /// Rest positions of the jaw-driven Dirichlet nodes.
    pub fn jaw_rest_points(&self) -> Vec<Vec3> {
        let mesh = &self.domain.mesh;
        self.jaw_slots.iter().map(|&i| mesh.nodes[self.domain.partition.dirichlet[i]]).collect()
    }

    /// Gathers the jaw-driven entries of a Dirichlet vector.
    pub fn jaw_values(&self, u_d: &[f64]) -> Vec<Vec3> {
        self.jaw_slots.iter().map(|&i| [u_d[3 * i], u_d[3 * i + 1], u_d[3 * i + 2]]).collect()
    }

    /// Dirichlet values: rest positions, with jaw nodes moved by `jaw`.
    pub fn dirichlet_positions(&self, jaw: Option<&JawTransform>) -> Vec<f64> {
        let mesh = &self.domain.mesh;
        let mut u_d: Vec<f64> = self.domain.partition.dirichlet.iter().flat_map(|&n| mesh.nodes[n]).collect();
        if let Some(t) = jaw {
            for &i in &self.jaw_slots {
                let p = t.apply_point(mesh.nodes[self.domain.partition.dirichlet[i]]);
                u_d[3 * i..3 * i + 3].copy_from_slice(&p);
            }
        }
        u_d
    }

    /// `∂L/∂Θ` from a gradient over Dirichlet values.
    pub fn jaw_gradient(&self, jaw: &JawTransform, dl_dud: &[f64]) -> [f64; 5] {
        jaw.vjp(&self.jaw_rest_points(), &self.jaw_values(dl_dud))
    }

    /// Embedded surface positions of a state.
    pub fn surface_positions(&self, u: &[f64]) -> Vec<Vec3> {
        self.embedding.interpolate(&self.domain.mesh, u)
    }

    /// Embedded surface of the rest state.
    pub fn rest_surface(&self) -> Vec<Vec3> {
        self.surface_positions(&self.domain.mesh.rest_positions())
    }
}

/// Forward pass of one frame with everything the backward pass needs.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub ctx: ShapeContext,
    pub batch: ActuationBatch,
    pub actuation: SampleActuation,
    pub jaw: Option<JawTransform>,
    pub u_d: Vec<f64>,
    pub state: QuasiStaticState,
    pub report: SolveReport,
}

/// Evaluates the field for latent `z` and solves for equilibrium.
pub fn simulate(
    field: &ShapeField,
    scene: &Scene,
    z: &[f64],
    u_init: Option<&[f64]>,
    solver: &SolverConfig,
) -> Result<Simulation> {
    let ctx = field.shape(z, Some(scene.resolution()))?;
    let batch = field.forward_actuation(&ctx, scene.sample_points())?;
    let mut actuation = SampleActuation::new(batch.params.clone())?;
    let jaw = if scene.has_jaw_nodes() { field.jaw(&ctx) } else { None };
    let u_d = scene.dirichlet_positions(jaw.as_ref());
    let (state, report) = scene.solver.solve(&scene.domain, &mut actuation, &u_d, u_init, solver)?;
    Ok(Simulation { ctx, batch, actuation, jaw, u_d, state, report })
}

/// Loss of a simulation plus `∂L/∂z`; parameter gradients are accumulated
/// into `grads`. When `jaw_gradients` is false the jaw receives none.
pub fn backpropagate(
    field: &ShapeField,
    scene: &Scene,
    sim: &Simulation,
    target: &TargetPose,
    loss: &LossConfig,
    jaw_gradients: bool,
    grads: &mut ParamStore,
) -> Result<(SurfaceLoss, Vec<f64>)> {
    let (value, du) = frame_loss(scene, &sim.state.u, target, loss)?;
    let part = &scene.domain.partition;
    let sens = Sensitivity::prepare(&scene.domain, &sim.actuation, &sim.state.u)?;
    let lambda = sens.adjoint(&part.gather_free(&du))?;
    let grad_b = grad_actuation(&scene.domain, &sim.actuation, &sim.state.u, &lambda);
    let grad_jaw = match (&sim.jaw, jaw_gradients) {
        (Some(t), true) => {
            let mut dud = grad_dirichlet(&scene.domain, &sens.system, &lambda);
            dud.iter_mut().zip(part.gather_dirichlet(&du)).for_each(|(a, b)| *a += b);
            Some(scene.jaw_gradient(t, &dud))
        }
        _ => None,
    };
    let dz = field.backward(&sim.ctx, Some((&sim.batch, &grad_b)), grad_jaw.as_ref(), grads)?;
    Ok((value, dz))
}

/// Loss of a state and its gradient over all degrees of freedom.
pub fn frame_loss(scene: &Scene, u: &[f64], target: &TargetPose, loss: &LossConfig) -> Result<(SurfaceLoss, Vec<f64>)> {
    if target.positions.len() != scene.surface.num_vertices() {
        return Err(Error::Dimension(format!(
            "target has {} vertices, surface has {}",
            target.positions.len(),
            scene.surface.num_vertices()
        )));
    }
    state_loss(&scene.domain.mesh, &scene.embedding, &scene.surface.faces, u, target, loss)
}
