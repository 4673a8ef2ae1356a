//! Quasi-static projective-dynamics solver.
//!
//! The global matrix `Σ w·GᵀG` acts identically on the x, y and z
//! coordinates, so it is stored and factored once as a scalar matrix over
//! nodes and applied to three right-hand sides.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::energy::{Domain, SampleActuation};
use crate::geometry::{Embedding, Partition, Slot};
use crate::linalg::Vec3;
use crate::sparse::{SparseSym, SymmetricFactor};
use crate::{Error, Result};

/// Allowed energy increase per iteration before the solve is declared
/// broken.
pub const DESCENT_SLACK: f64 = 1e-12;
const ENERGY_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    /// Stop once `‖∇_{u_c}E‖∞` falls below this value.
    pub force_tolerance: f64,
    pub max_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Threshold on the relative energy progress `(E_k − E_{k+1}) / max(E_k, 1e-12)`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Optional Newton refinement after the projective iterations.
    pub newton: Option<NewtonConfig>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tolerance: 1e-6, max_iterations: 300, newton: None }
    }
}

impl SolverConfig {
    /// Standard projective stopping rule followed by a short Newton
    /// refinement, so that adjoint gradients are taken at equilibrium.
    pub fn refined() -> Self {
        SolverConfig {
            tolerance: 1e-6,
            max_iterations: 300,
            newton: Some(NewtonConfig { force_tolerance: 1e-9, max_steps: 20 }),
        }
    }

    /// Tight settings for finite-difference checks.
    pub fn tight() -> Self {
        SolverConfig {
            tolerance: 1e-10,
            max_iterations: 300,
            newton: Some(NewtonConfig { force_tolerance: 1e-11, max_steps: 30 }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    RelativeProgress,
    MaxIterations,
    ForceTolerance,
    /// Newton refinement could not decrease the energy further.
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub newton_steps: usize,
    /// Energy after the initial local step and after every iteration.
    pub energy_trace: Vec<f64>,
    pub final_relative_progress: f64,
    /// `‖∇_{u_c}E‖∞` at the returned state.
    pub free_force_norm: f64,
    pub initial_free_force_norm: f64,
    pub clamp_warnings: u32,
    pub wall_time_seconds: Option<f64>,
    pub converged: bool,
    pub stop: StopReason,
}

/// Solution of a quasi-static problem: all nodal positions.
#[derive(Clone, Debug, PartialEq)]
pub struct QuasiStaticState {
    pub u: Vec<f64>,
}

/// Zero-rest-length springs pulling embedded surface vertices towards
/// target positions: `k·Σ‖Wu − s‖²`.
#[derive(Clone, Debug)]
pub struct Springs {
    pub embedding: Embedding,
    pub targets: Vec<Vec3>,
    pub stiffness: f64,
}

impl Springs {
    fn energy(&self, domain: &Domain, u: &[f64]) -> f64 {
        let p = self.embedding.interpolate(&domain.mesh, u);
        self.stiffness
            * p.iter()
                .zip(self.targets.iter())
                .map(|(a, b)| (0..3).map(|d| (a[d] - b[d]) * (a[d] - b[d])).sum::<f64>())
                .sum::<f64>()
    }

    fn gradient(&self, domain: &Domain, u: &[f64]) -> Vec<f64> {
        let p = self.embedding.interpolate(&domain.mesh, u);
        let g: Vec<Vec3> =
            p.iter().zip(self.targets.iter()).map(|(a, b)| [0, 1, 2].map(|d| 2.0 * self.stiffness * (a[d] - b[d]))).collect();
        self.embedding.pullback(&domain.mesh, &g)
    }
}

/// Prefactored projective-dynamics system.
#[derive(Clone, Debug)]
pub struct PdSolver {
    /// Scalar system matrix over all nodes.
    scalar: SparseSym,
    free_factor: SymmetricFactor,
    springs: Option<Springs>,
}

fn timer() -> Option<impl Fn() -> f64> {
    #[cfg(feature = "std")]
    {
        let start = std::time::Instant::now();
        Some(move || start.elapsed().as_secs_f64())
    }
    #[cfg(not(feature = "std"))]
    {
        None::<fn() -> f64>
    }
}

impl PdSolver {
    pub fn prefactor(domain: &Domain) -> Result<Self> {
        Self::build(domain, None)
    }

    pub fn with_springs(domain: &Domain, springs: Springs) -> Result<Self> {
        if springs.targets.len() != springs.embedding.num_vertices() {
            return Err(Error::Dimension(format!(
                "{} spring targets for {} embedded vertices",
                springs.targets.len(),
                springs.embedding.num_vertices()
            )));
        }
        Self::build(domain, Some(springs))
    }

    fn build(domain: &Domain, springs: Option<Springs>) -> Result<Self> {
        let mesh = &domain.mesh;
        let samples = &domain.samples;
        let n = samples.per_element;
        // Element-level scalar matrix is the same for every element.
        let mut local = [[0.0; 8]; 8];
        for t in &samples.templates {
            for a in 0..8 {
                for b in 0..8 {
                    local[a][b] += samples.weight * (0..3).map(|k| t.grads[a][k] * t.grads[b][k]).sum::<f64>();
                }
            }
        }
        debug_assert_eq!(samples.templates.len(), n);
        if let Some(k) = domain.hourglass_matrix() {
            for a in 0..8 {
                for b in 0..8 {
                    local[a][b] += k[3 * a][3 * b];
                }
            }
        }
        let mut triplets = Vec::with_capacity(64 * mesh.num_elements());
        for el in &mesh.elements {
            for a in 0..8 {
                for b in 0..8 {
                    triplets.push((el[a], el[b], local[a][b]));
                }
            }
        }
        if let Some(sp) = &springs {
            for (&e, w) in sp.embedding.host.iter().zip(sp.embedding.weights.iter()) {
                let el = mesh.elements[e];
                for a in 0..8 {
                    for b in 0..8 {
                        let v = 2.0 * sp.stiffness * w[a] * w[b];
                        if v != 0.0 {
                            triplets.push((el[a], el[b], v));
                        }
                    }
                }
            }
        }
        let scalar = SparseSym::from_triplets(mesh.num_nodes(), &triplets);
        let free = &domain.partition.free;
        if free.is_empty() {
            return Err(Error::InvalidInput("no free nodes to solve for".into()));
        }
        let free_factor = SymmetricFactor::factor_spd(&scalar.submatrix(free)).map_err(|e| {
            Error::Factorization(format!(
                "projective-dynamics matrix is singular; is every part of the mesh attached to a Dirichlet node? ({e})"
            ))
        })?;
        Ok(PdSolver { scalar, free_factor, springs })
    }

    pub fn springs(&self) -> Option<&Springs> {
        self.springs.as_ref()
    }

    /// Total energy including springs.
    pub fn energy(&self, domain: &Domain, act: &SampleActuation, u: &[f64]) -> Result<f64> {
        let e = domain.energy(act, u)?;
        Ok(e + self.springs.as_ref().map_or(0.0, |s| s.energy(domain, u)))
    }

    /// Total gradient over the free coordinates.
    pub fn free_gradient(&self, domain: &Domain, act: &SampleActuation, u: &[f64]) -> Result<Vec<f64>> {
        let (_, mut g) = domain.energy_and_force(act, u)?;
        if let Some(s) = &self.springs {
            for (gi, si) in g.iter_mut().zip(s.gradient(domain, u)) {
                *gi += si;
            }
        }
        Ok(domain.partition.free_dofs().into_iter().map(|d| g[d]).collect())
    }

    /// Global step: minimizes the quadratic with the cached rotations held
    /// fixed and writes the free coordinates of `u`.
    pub fn global_step(&self, domain: &Domain, act: &SampleActuation, u: &mut [f64]) -> Result<()> {
        act.ensure_fresh(u)?;
        let mesh = &domain.mesh;
        let samples = &domain.samples;
        let n = samples.per_element;
        let mut rhs = vec![0.0; 3 * mesh.num_nodes()];
        for e in 0..mesh.num_elements() {
            let mut acc = [0.0; 24];
            for s in e * n..(e + 1) * n {
                let target = (*act.rotation(s) * *act.matrix(s)).to_vec9();
                let t = samples.gradients(s).apply_transpose(&target);
                for i in 0..24 {
                    acc[i] += samples.weight * t[i];
                }
            }
            for (i, dof) in mesh.element_dofs(e).into_iter().enumerate() {
                rhs[dof] += acc[i];
            }
        }
        if let Some(sp) = &self.springs {
            let g: Vec<Vec3> = sp.targets.iter().map(|t| t.map(|x| 2.0 * sp.stiffness * x)).collect();
            for (r, p) in rhs.iter_mut().zip(sp.embedding.pullback(mesh, &g)) {
                *r += p;
            }
        }
        if rhs.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("global-step right-hand side".into()));
        }
        let part = &domain.partition;
        let nn = mesh.num_nodes();
        for d in 0..3 {
            let mut ud = vec![0.0; nn];
            for &node in &part.dirichlet {
                ud[node] = u[3 * node + d];
            }
            let coupling = self.scalar.mul_vec(&ud);
            let b: Vec<f64> = part.free.iter().map(|&node| rhs[3 * node + d] - coupling[node]).collect();
            let x = self.free_factor.solve(&b);
            for (i, &node) in part.free.iter().enumerate() {
                u[3 * node + d] = x[i];
            }
        }
        Ok(())
    }

    /// Alternates local and global steps from `u_init` (rest pose when
    /// absent) with the Dirichlet block set to `u_d`.
    pub fn solve(
        &self,
        domain: &Domain,
        act: &mut SampleActuation,
        u_d: &[f64],
        u_init: Option<&[f64]>,
        config: &SolverConfig,
    ) -> Result<(QuasiStaticState, SolveReport)> {
        let elapsed = timer();
        let part = &domain.partition;
        if u_d.len() != 3 * part.dirichlet.len() {
            return Err(Error::Dimension(format!(
                "{} Dirichlet values for {} Dirichlet nodes",
                u_d.len(),
                part.dirichlet.len()
            )));
        }
        let mut u = match u_init {
            Some(init) if init.len() == domain.num_dofs() => init.to_vec(),
            Some(init) => {
                return Err(Error::Dimension(format!("initial state has {} entries", init.len())));
            }
            None => domain.mesh.rest_positions(),
        };
        part.scatter_dirichlet(u_d, &mut u);

        act.refresh_rotations(domain, &u)?;
        let mut energy = self.energy(domain, act, &u)?;
        let mut trace = vec![energy];
        let initial_free_force_norm = inf_norm(&self.free_gradient(domain, act, &u)?);
        let mut progress = f64::INFINITY;
        let mut iterations = 0;
        let mut stop = StopReason::MaxIterations;
        while iterations < config.max_iterations {
            self.global_step(domain, act, &mut u)?;
            act.refresh_rotations(domain, &u)?;
            let next = self.energy(domain, act, &u)?;
            iterations += 1;
            if next > energy + DESCENT_SLACK {
                return Err(Error::EnergyIncrease { iteration: iterations, before: energy, after: next });
            }
            trace.push(next);
            progress = (energy - next) / energy.max(ENERGY_FLOOR);
            energy = next;
            if progress < config.tolerance {
                stop = StopReason::RelativeProgress;
                break;
            }
        }

        let mut newton_steps = 0;
        let mut clamp_warnings = 0;
        if let Some(nc) = &config.newton {
            let (steps, clamps, newton_stop) = self.newton_polish(domain, act, &mut u, &mut trace, nc)?;
            newton_steps = steps;
            clamp_warnings += clamps;
            if let Some(s) = newton_stop {
                stop = s;
            }
            act.refresh_rotations(domain, &u)?;
        }

        let free_force_norm = inf_norm(&self.free_gradient(domain, act, &u)?);
        let converged = match stop {
            StopReason::RelativeProgress | StopReason::ForceTolerance => true,
            StopReason::Stalled => true,
            StopReason::MaxIterations => false,
        };
        if !converged {
            log::warn!("quasi-static solve hit {} iterations (relative progress {progress:e})", config.max_iterations);
        }
        let report = SolveReport {
            iterations,
            newton_steps,
            energy_trace: trace,
            final_relative_progress: progress,
            free_force_norm,
            initial_free_force_norm,
            clamp_warnings,
            wall_time_seconds: elapsed.map(|f| f()),
            converged,
            stop,
        };
        Ok((QuasiStaticState { u }, report))
    }

    /// Damped Newton iterations on the free coordinates using the exact
    /// Hessian, falling back to the projective-dynamics direction when the
    /// Newton direction does not descend.
    fn newton_polish(
        &self,
        domain: &Domain,
        act: &SampleActuation,
        u: &mut [f64],
        trace: &mut Vec<f64>,
        nc: &NewtonConfig,
    ) -> Result<(usize, u32, Option<StopReason>)> {
        let part = &domain.partition;
        let free_dofs = part.free_dofs();
        let mut clamps = 0;
        let mut energy = *trace.last().expect("trace starts with the initial energy");
        for step in 0..nc.max_steps {
            let sys = domain.assemble(act, u)?;
            clamps += sys.clamped;
            let mut grad = sys.force.clone();
            let mut hcc = sys.free_block(part);
            if let Some(sp) = &self.springs {
                for (g, s) in grad.iter_mut().zip(sp.gradient(domain, u)) {
                    *g += s;
                }
                hcc = add_spring_hessian(&hcc, domain, sp);
            }
            let g: Vec<f64> = free_dofs.iter().map(|&d| grad[d]).collect();
            if inf_norm(&g) <= nc.force_tolerance {
                return Ok((step, clamps, Some(StopReason::ForceTolerance)));
            }
            let neg: Vec<f64> = g.iter().map(|x| -x).collect();
            let mut dir = SymmetricFactor::factor_symmetric(&hcc)
                .ok()
                .filter(|f| !f.info.indefinite())
                .map(|f| f.solve_refined(&neg).0)
                .filter(|d| dot(d, &g) < 0.0);
            if dir.is_none() {
                dir = Some(self.pd_direction(part, &neg));
            }
            let dir = dir.expect("direction set above");
            let slope = dot(&dir, &g);
            let mut t = 1.0;
            let mut accepted = false;
            let mut trial = u.to_vec();
            for _ in 0..30 {
                for (i, &d) in free_dofs.iter().enumerate() {
                    trial[d] = u[d] + t * dir[i];
                }
                let e = self.energy(domain, act, &trial)?;
                if e <= energy + 1e-4 * t * slope {
                    accepted = e < energy;
                    if accepted {
                        u.copy_from_slice(&trial);
                        energy = e;
                        trace.push(e);
                    }
                    break;
                }
                t *= 0.5;
            }
            if !accepted && -slope <= 1e3 * f64::EPSILON * energy.abs().max(ENERGY_FLOOR) {
                // The energy can no longer resolve the remaining decrease;
                // accept the full step if it reduces the force instead.
                for (i, &d) in free_dofs.iter().enumerate() {
                    trial[d] = u[d] + dir[i];
                }
                if inf_norm(&self.free_gradient(domain, act, &trial)?) < inf_norm(&g) {
                    let e = self.energy(domain, act, &trial)?;
                    if e <= energy + DESCENT_SLACK {
                        u.copy_from_slice(&trial);
                        energy = e.min(energy);
                        trace.push(energy);
                        accepted = true;
                    }
                }
            }
            if !accepted {
                return Ok((step, clamps, Some(StopReason::Stalled)));
            }
        }
        Ok((nc.max_steps, clamps, None))
    }

    fn pd_direction(&self, part: &Partition, neg: &[f64]) -> Vec<f64> {
        let nf = part.free.len();
        let mut out = vec![0.0; 3 * nf];
        for d in 0..3 {
            let b: Vec<f64> = (0..nf).map(|i| neg[3 * i + d]).collect();
            let x = self.free_factor.solve(&b);
            for i in 0..nf {
                out[3 * i + d] = x[i];
            }
        }
        out
    }
}

fn add_spring_hessian(hcc: &SparseSym, domain: &Domain, sp: &Springs) -> SparseSym {
    let part = &domain.partition;
    let mut triplets = Vec::new();
    for c in 0..hcc.dim() {
        for (r, v) in hcc.column(c) {
            triplets.push((r, c, v));
        }
    }
    for (&e, w) in sp.embedding.host.iter().zip(sp.embedding.weights.iter()) {
        let el = domain.mesh.elements[e];
        for a in 0..8 {
            let Slot::Free(ia) = part.slot(el[a]) else { continue };
            for b in 0..8 {
                let Slot::Free(ib) = part.slot(el[b]) else { continue };
                let v = 2.0 * sp.stiffness * w[a] * w[b];
                for d in 0..3 {
                    triplets.push((3 * ia + d, 3 * ib + d, v));
                }
            }
        }
    }
    SparseSym::from_triplets(hcc.dim(), &triplets)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_samples, HexMesh, NodeTag};
    use crate::kernels::ActuationParams;

    fn bar(dims: [usize; 3], n: usize) -> Domain {
        let mut mesh = HexMesh::grid(dims, 0.5);
        mesh.tag_nodes_in_box([0.0; 3], [0.0, 10.0, 10.0], NodeTag::Fixed);
        let samples = build_samples(&mesh, n).unwrap();
        Domain::new(mesh, samples)
    }

    #[test]
    fn identity_actuation_stays_at_rest() {
        let d = bar([3, 1, 1], 8);
        let solver = PdSolver::prefactor(&d).unwrap();
        let mut act = SampleActuation::identity(d.samples.len());
        let rest = d.mesh.rest_positions();
        let ud = d.partition.gather_dirichlet(&rest);
        let (state, report) = solver.solve(&d, &mut act, &ud, None, &SolverConfig::default()).unwrap();
        assert_eq!(report.iterations, 1);
        assert_eq!(report.energy_trace[0], 0.0);
        assert!(report.energy_trace[1] < 1e-24);
        for (a, b) in state.u.iter().zip(rest.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn global_step_single_free_node() {
        let mut mesh = HexMesh::grid([1, 1, 1], 1.0);
        for t in mesh.tags.iter_mut() {
            *t = NodeTag::Fixed;
        }
        mesh.tags[7] = NodeTag::Free;
        let samples = build_samples(&mesh, 8).unwrap();
        let d = Domain::new(mesh, samples);
        let solver = PdSolver::prefactor(&d).unwrap();
        assert_eq!(solver.free_factor.dim(), 1);
        let mut act = SampleActuation::identity(8);
        let mut u = d.mesh.rest_positions();
        u[21] += 0.3;
        act.refresh_rotations(&d, &u).unwrap();
        let before = u.clone();
        solver.global_step(&d, &act, &mut u).unwrap();
        // Idempotent with fixed rotations.
        let mut again = before.clone();
        solver.global_step(&d, &act, &mut again).unwrap();
        assert_eq!(u, again);
        assert!(u[21] < before[21]);
    }

    #[test]
    fn stretched_bar_converges_monotonically() {
        let d = bar([4, 1, 1], 8);
        let solver = PdSolver::prefactor(&d).unwrap();
        let b = ActuationParams([0.2, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mut act = SampleActuation::uniform(d.samples.len(), b).unwrap();
        let ud = d.partition.gather_dirichlet(&d.mesh.rest_positions());
        let (state, report) = solver.solve(&d, &mut act, &ud, None, &SolverConfig::default()).unwrap();
        assert!(report.energy_trace.windows(2).all(|w| w[1] <= w[0] + DESCENT_SLACK));
        let (lo, hi) = (d.mesh.bounding_box().0, d.mesh.bounding_box().1);
        let max_x = (0..d.mesh.num_nodes()).map(|n| state.u[3 * n]).fold(f64::MIN, f64::max);
        assert!(max_x > (hi[0] - lo[0]) * 1.1);
        assert_eq!(d.partition.gather_dirichlet(&state.u), ud);
    }

    #[test]
    fn unanchored_mesh_fails_to_factor() {
        let mesh = HexMesh::grid([1, 1, 1], 1.0);
        let samples = build_samples(&mesh, 8).unwrap();
        let d = Domain::new(mesh, samples);
        assert!(matches!(PdSolver::prefactor(&d), Err(Error::Factorization(_))));
    }
}
