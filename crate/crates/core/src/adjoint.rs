//! Backward pass through the quasi-static equilibrium `∇_{u_c}E(u*, A) = 0`.
//!
//! For a loss `L(u*)`, the adjoint `λ = H_cc⁻¹·(∂L/∂u_c)ᵀ` gives
//! `dL/db = −λᵀ·∂∇_{u_c}E/∂b` and `dL/du_d = −λᵀ·H_cd` (plus any direct
//! dependence of `L` on `u_d`, which callers add themselves).

use alloc::format;
use alloc::vec::Vec;

use crate::energy::{sample_hessian_b_vjp, Domain, GlobalSystem, SampleActuation};
use crate::geometry::Slot;
use crate::par;
use crate::sparse::{FactorInfo, SymmetricFactor};
use crate::{Error, Result};

/// Largest acceptable relative residual of the adjoint solve.
pub const ADJOINT_RESIDUAL: f64 = 1e-8;

/// Exact Hessian at a converged state, factored for adjoint solves.
#[derive(Clone, Debug)]
pub struct Sensitivity {
    pub system: GlobalSystem,
    factor: SymmetricFactor,
}

impl Sensitivity {
    /// Assembles and factors `H_cc` at `u`. Indefinite matrices are
    /// accepted and reported through [`Sensitivity::info`].
    pub fn prepare(domain: &Domain, act: &SampleActuation, u: &[f64]) -> Result<Self> {
        let system = domain.assemble(act, u)?;
        let hcc = system.free_block(&domain.partition);
        let factor = SymmetricFactor::factor_symmetric(&hcc).map_err(|e| {
            Error::Factorization(format!(
                "Hessian at the converged state could not be factored ({e}); {} rotation-gradient denominators were clamped",
                system.clamped
            ))
        })?;
        if factor.info.indefinite() {
            log::warn!(
                "Hessian at the converged state is indefinite ({} negative pivots, dense fallback: {})",
                factor.info.negative_pivots,
                factor.info.dense_fallback
            );
        }
        Ok(Sensitivity { system, factor })
    }

    pub fn info(&self) -> FactorInfo {
        self.factor.info
    }

    /// `λ = H_cc⁻¹·g_c`.
    pub fn adjoint(&self, dl_du_c: &[f64]) -> Result<Vec<f64>> {
        if dl_du_c.len() != self.factor.dim() {
            return Err(Error::Dimension(format!(
                "loss gradient has {} entries, expected {}",
                dl_du_c.len(),
                self.factor.dim()
            )));
        }
        if dl_du_c.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("loss gradient".into()));
        }
        let (lambda, residual) = self.factor.solve_refined(dl_du_c);
        if !(residual < ADJOINT_RESIDUAL) {
            return Err(Error::Factorization(format!(
                "adjoint residual {residual:e} exceeds {ADJOINT_RESIDUAL:e}; {} rotation-gradient denominators were clamped",
                self.system.clamped
            )));
        }
        Ok(lambda)
    }
}

/// One-shot adjoint solve against the free block of `system`.
pub fn adjoint_solve(domain: &Domain, system: &GlobalSystem, dl_du_c: &[f64]) -> Result<Vec<f64>> {
    let hcc = system.free_block(&domain.partition);
    let factor = SymmetricFactor::factor_symmetric(&hcc)?;
    let (lambda, residual) = factor.solve_refined(dl_du_c);
    if !(residual < ADJOINT_RESIDUAL) {
        return Err(Error::Factorization(format!("adjoint residual {residual:e} exceeds {ADJOINT_RESIDUAL:e}")));
    }
    Ok(lambda)
}

/// `dL/db` for every sample, computed sample by sample without forming
/// `H_Ω`.
pub fn grad_actuation(domain: &Domain, act: &SampleActuation, u: &[f64], lambda: &[f64]) -> Vec<[f64; 6]> {
    let mesh = &domain.mesh;
    let part = &domain.partition;
    let n = domain.samples.per_element;
    let w = domain.samples.weight;
    par::map_chunks(mesh.num_elements(), par::CHUNK, |range| {
        let mut out = Vec::with_capacity(range.len() * n);
        for e in range {
            let u_e = mesh.gather(e, u);
            let mut lam = [0.0; 24];
            for (c, &node) in mesh.elements[e].iter().enumerate() {
                if let Slot::Free(i) = part.slot(node) {
                    lam[3 * c..3 * c + 3].copy_from_slice(&lambda[3 * i..3 * i + 3]);
                }
            }
            for s in e * n..(e + 1) * n {
                let (vjp, _) = sample_hessian_b_vjp(domain.samples.gradients(s), &u_e, act.matrix(s), &lam);
                out.push(vjp.map(|x| -w * x));
            }
        }
        out
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Implicit part of `dL/du_d`: `−λᵀ·H_cd`.
pub fn grad_dirichlet(domain: &Domain, system: &GlobalSystem, lambda: &[f64]) -> Vec<f64> {
    system.cross_block_transpose_mul(&domain.partition, lambda).into_iter().map(|x| -x).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_samples, HexMesh, NodeTag};
    use crate::kernels::ActuationParams;
    use crate::solver::{PdSolver, SolverConfig};
    use alloc::vec;

    fn setup() -> (Domain, SampleActuation, Vec<f64>) {
        let mut mesh = HexMesh::grid([2, 1, 1], 1.0);
        mesh.tag_nodes_in_box([0.0; 3], [0.0, 1.0, 1.0], NodeTag::Fixed);
        let samples = build_samples(&mesh, 8).unwrap();
        let d = Domain::new(mesh, samples);
        let mut act = SampleActuation::uniform(16, ActuationParams([0.1, 0.02, 0.0, -0.05, 0.0, 0.03])).unwrap();
        let solver = PdSolver::prefactor(&d).unwrap();
        let ud = d.partition.gather_dirichlet(&d.mesh.rest_positions());
        let (state, _) = solver.solve(&d, &mut act, &ud, None, &SolverConfig::tight()).unwrap();
        (d, act, state.u)
    }

    #[test]
    fn zero_loss_gradient_gives_zero() {
        let (d, act, u) = setup();
        let sens = Sensitivity::prepare(&d, &act, &u).unwrap();
        let nc = 3 * d.partition.free.len();
        let lambda = sens.adjoint(&vec![0.0; nc]).unwrap();
        assert!(lambda.iter().all(|&x| x == 0.0));
        assert!(grad_actuation(&d, &act, &u, &lambda).iter().flatten().all(|&x| x == 0.0));
        assert!(grad_dirichlet(&d, &sens.system, &lambda).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradients_are_linear_in_lambda() {
        let (d, act, u) = setup();
        let sens = Sensitivity::prepare(&d, &act, &u).unwrap();
        let nc = 3 * d.partition.free.len();
        let l1: Vec<f64> = (0..nc).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let l2: Vec<f64> = (0..nc).map(|i| ((i * 3) % 4) as f64 * 0.5).collect();
        let sum: Vec<f64> = l1.iter().zip(l2.iter()).map(|(a, b)| a + b).collect();
        let (g1, g2, gs) = (
            grad_actuation(&d, &act, &u, &l1),
            grad_actuation(&d, &act, &u, &l2),
            grad_actuation(&d, &act, &u, &sum),
        );
        for s in 0..gs.len() {
            for k in 0..6 {
                assert!((g1[s][k] + g2[s][k] - gs[s][k]).abs() < 1e-12);
            }
        }
        let (d1, d2, ds) = (
            grad_dirichlet(&d, &sens.system, &l1),
            grad_dirichlet(&d, &sens.system, &l2),
            grad_dirichlet(&d, &sens.system, &sum),
        );
        for i in 0..ds.len() {
            assert!((d1[i] + d2[i] - ds[i]).abs() < 1e-12);
        }
    }
}
