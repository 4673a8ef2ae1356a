//! Shape-targeting energy `Ψ = ½‖F − R·A‖²` with `R` the polar rotation of
//! `F·A`, its gradient, both closed-form Hessians and global assembly.
//!
//! Nodal unknowns are positions (not displacements), so the rest
//! configuration has `F = I`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{HexMesh, Partition, SampleSet, ShapeGradients, CORNERS};
use crate::kernels::{
    chain_actuation_gradient, hat_f, hat_r, hat_sym, mat9_mul, mat9_mul_vec, mat9_transpose_mul_vec,
    polar_decompose, rotation_gradient, ActuationParams, Mat9, Vec9, ACTUATION_JACOBIAN,
};
use crate::linalg::Mat3;
use crate::par;
use crate::sparse::SparseSym;
use crate::{Error, Result};

/// Stabilization stiffness used when a single sample per element cannot
/// control the non-affine element modes.
pub const DEFAULT_HOURGLASS: f64 = 0.05;

pub type Mat24 = [[f64; 24]; 24];

/// Mesh, samples and boundary partition of one simulation problem.
#[derive(Clone, Debug)]
pub struct Domain {
    pub mesh: HexMesh,
    pub samples: SampleSet,
    pub partition: Partition,
    /// Stiffness of the quadratic penalty on non-affine element modes;
    /// zero disables it.
    pub hourglass: f64,
    hourglass_matrix: Option<Mat24>,
}

impl Domain {
    /// Enables hourglass stabilization by default only for one sample per
    /// element, where the quadrature alone is rank deficient.
    pub fn new(mesh: HexMesh, samples: SampleSet) -> Self {
        let k = if samples.per_element == 1 { DEFAULT_HOURGLASS } else { 0.0 };
        Self::with_hourglass(mesh, samples, k)
    }

    pub fn with_hourglass(mesh: HexMesh, samples: SampleSet, hourglass: f64) -> Self {
        let partition = mesh.partition();
        let hourglass_matrix = (hourglass > 0.0).then(|| hourglass_stiffness(hourglass, mesh.h));
        Domain { mesh, samples, partition, hourglass, hourglass_matrix }
    }

    /// Rebuilds the partition after node tags changed.
    pub fn refresh_partition(&mut self) {
        self.partition = self.mesh.partition();
    }

    pub fn num_dofs(&self) -> usize {
        3 * self.mesh.num_nodes()
    }

    pub fn hourglass_matrix(&self) -> Option<&Mat24> {
        self.hourglass_matrix.as_ref()
    }

    fn check_dims(&self, act: &SampleActuation, u: &[f64]) -> Result<()> {
        if act.len() != self.samples.len() {
            return Err(Error::Dimension(format!(
                "{} actuations for {} samples",
                act.len(),
                self.samples.len()
            )));
        }
        if u.len() != self.num_dofs() {
            return Err(Error::Dimension(format!("state has {} entries, expected {}", u.len(), self.num_dofs())));
        }
        Ok(())
    }

    /// Energy with the optimal rotation at every sample.
    pub fn energy(&self, act: &SampleActuation, u: &[f64]) -> Result<f64> {
        Ok(self.energy_and_force(act, u)?.0)
    }

    /// Energy and its gradient `∇_u E` over all nodal coordinates.
    pub fn energy_and_force(&self, act: &SampleActuation, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dims(act, u)?;
        let n = self.samples.per_element;
        let w = self.samples.weight;
        let per_element = par::map_chunks(self.mesh.num_elements(), par::CHUNK, |range| {
            range
                .map(|e| {
                    let u_e = self.mesh.gather(e, u);
                    let mut energy = 0.0;
                    let mut grad = [0.0; 24];
                    for s in e * n..(e + 1) * n {
                        let g = self.samples.gradients(s);
                        let a = act.matrix(s);
                        let r = polar_decompose(&(g.deformation_gradient(&u_e) * *a)).r;
                        energy += w * sample_energy(g, &u_e, a, &r);
                        let gs = sample_gradient(g, &u_e, a, &r);
                        for i in 0..24 {
                            grad[i] += w * gs[i];
                        }
                    }
                    if let Some(k) = &self.hourglass_matrix {
                        let ku = mat24_mul_vec(k, &u_e);
                        energy += 0.5 * dot24(&u_e, &ku);
                        for i in 0..24 {
                            grad[i] += ku[i];
                        }
                    }
                    (energy, grad)
                })
                .collect::<Vec<_>>()
        });
        let mut energy = 0.0;
        let mut force = vec![0.0; self.num_dofs()];
        for (e, (en, g)) in per_element.into_iter().flatten().enumerate() {
            if !en.is_finite() || g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("energy contribution of element {e} (samples {}..{})", e * n, (e + 1) * n)));
            }
            energy += en;
            for (i, dof) in self.mesh.element_dofs(e).into_iter().enumerate() {
                force[dof] += g[i];
            }
        }
        Ok((energy, force))
    }

    /// Energy, force and the exact Hessian `H_u` at `u`. Polar factors are
    /// recomputed here, so the result never depends on cached rotations.
    pub fn assemble(&self, act: &SampleActuation, u: &[f64]) -> Result<GlobalSystem> {
        self.check_dims(act, u)?;
        let n = self.samples.per_element;
        let w = self.samples.weight;
        let per_element = par::map_chunks(self.mesh.num_elements(), par::CHUNK, |range| {
            range
                .map(|e| {
                    let u_e = self.mesh.gather(e, u);
                    let mut energy = 0.0;
                    let mut grad = [0.0; 24];
                    let mut hess = [[0.0; 24]; 24];
                    let mut clamped = 0;
                    for s in e * n..(e + 1) * n {
                        let g = self.samples.gradients(s);
                        let a = act.matrix(s);
                        let pf = polar_decompose(&(g.deformation_gradient(&u_e) * *a));
                        energy += w * sample_energy(g, &u_e, a, &pf.r);
                        let gs = sample_gradient(g, &u_e, a, &pf.r);
                        let (hs, c) = sample_hessian_u(g, a, &pf);
                        clamped += c;
                        for i in 0..24 {
                            grad[i] += w * gs[i];
                            for j in 0..24 {
                                hess[i][j] += w * hs[i][j];
                            }
                        }
                    }
                    if let Some(k) = &self.hourglass_matrix {
                        let ku = mat24_mul_vec(k, &u_e);
                        energy += 0.5 * dot24(&u_e, &ku);
                        for i in 0..24 {
                            grad[i] += ku[i];
                            for j in 0..24 {
                                hess[i][j] += k[i][j];
                            }
                        }
                    }
                    (energy, grad, hess, clamped)
                })
                .collect::<Vec<_>>()
        });
        let mut energy = 0.0;
        let mut force = vec![0.0; self.num_dofs()];
        let mut triplets = Vec::with_capacity(576 * self.mesh.num_elements());
        let mut clamped = 0;
        for (e, (en, g, h, c)) in per_element.into_iter().flatten().enumerate() {
            if !en.is_finite() || g.iter().any(|x| !x.is_finite()) || h.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("Hessian contribution of element {e} (samples {}..{})", e * n, (e + 1) * n)));
            }
            energy += en;
            clamped += c;
            let dofs = self.mesh.element_dofs(e);
            for i in 0..24 {
                force[dofs[i]] += g[i];
                for j in 0..24 {
                    triplets.push((dofs[i], dofs[j], h[i][j]));
                }
            }
        }
        let hessian = SparseSym::from_triplets(self.num_dofs(), &triplets);
        Ok(GlobalSystem { energy, force, hessian, clamped })
    }
}

/// Assembled energy, gradient and Hessian over all nodal coordinates.
#[derive(Clone, Debug)]
pub struct GlobalSystem {
    pub energy: f64,
    /// `∇_u E`; the net internal force is its negation.
    pub force: Vec<f64>,
    pub hessian: SparseSym,
    /// Rotation-gradient denominators clamped during assembly.
    pub clamped: u32,
}

impl GlobalSystem {
    /// The free-free block `H_cc`.
    pub fn free_block(&self, partition: &Partition) -> SparseSym {
        self.hessian.submatrix(&partition.free_dofs())
    }

    /// `H_dc·x_c`, equivalently `(x_cᵀ·H_cd)ᵀ`.
    pub fn cross_block_transpose_mul(&self, partition: &Partition, x_c: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.hessian.dim()];
        for (i, dof) in partition.free_dofs().into_iter().enumerate() {
            full[dof] = x_c[i];
        }
        let y = self.hessian.mul_vec(&full);
        partition.dirichlet_dofs().into_iter().map(|d| y[d]).collect()
    }

    pub fn free_force(&self, partition: &Partition) -> Vec<f64> {
        partition.free_dofs().into_iter().map(|d| self.force[d]).collect()
    }
}

/// Per-sample actuation matrices with cached local-step rotations.
#[derive(Clone, Debug)]
pub struct SampleActuation {
    params: Vec<ActuationParams>,
    matrices: Vec<Mat3>,
    rotations: Vec<Mat3>,
    stamp: Option<u64>,
}

impl SampleActuation {
    /// Rejects non-finite parameters and matrices with `det A ≤ 0`.
    pub fn new(params: Vec<ActuationParams>) -> Result<Self> {
        let mut matrices = Vec::with_capacity(params.len());
        for (s, b) in params.iter().enumerate() {
            if !b.is_finite() {
                return Err(Error::NonFinite(format!("actuation of sample {s}")));
            }
            let a = b.to_matrix();
            let det = a.det();
            if det <= 0.0 {
                return Err(Error::InvalidActuation { sample: s, det });
            }
            matrices.push(a);
        }
        let rotations = vec![Mat3::IDENTITY; params.len()];
        Ok(SampleActuation { params, matrices, rotations, stamp: None })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(vec![ActuationParams::IDENTITY; n]).expect("identity is admissible")
    }

    pub fn uniform(n: usize, b: ActuationParams) -> Result<Self> {
        Self::new(vec![b; n])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[ActuationParams] {
        &self.params
    }

    pub fn matrix(&self, s: usize) -> &Mat3 {
        &self.matrices[s]
    }

    pub fn rotation(&self, s: usize) -> &Mat3 {
        &self.rotations[s]
    }

    /// Local step: replaces every cached rotation by the polar rotation of
    /// `F·A` at `u`.
    pub fn refresh_rotations(&mut self, domain: &Domain, u: &[f64]) -> Result<()> {
        domain.check_dims(self, u)?;
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("state passed to the local step".into()));
        }
        let n = domain.samples.per_element;
        let matrices = &self.matrices;
        self.rotations = par::map_indexed(self.params.len(), |s| {
            let u_e = domain.mesh.gather(s / n, u);
            let f = domain.samples.gradients(s).deformation_gradient(&u_e);
            polar_decompose(&(f * matrices[s])).r
        });
        self.stamp = Some(state_stamp(u));
        Ok(())
    }

    /// Fails unless the cached rotations were computed at `u`.
    pub fn ensure_fresh(&self, u: &[f64]) -> Result<()> {
        if self.stamp == Some(state_stamp(u)) {
            Ok(())
        } else {
            Err(Error::StaleCache("rotations were not refreshed at the current state".into()))
        }
    }
}

/// FNV-1a hash over the bit patterns of a state vector.
fn state_stamp(u: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in u {
        for byte in x.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Quadratic penalty `½·uᵀKu` on the four non-affine modes of each element.
fn hourglass_stiffness(kappa: f64, h: f64) -> Mat24 {
    let sign = |c: usize, d: usize| if CORNERS[c][d] == 1 { 1.0 } else { -1.0 };
    let modes: [[f64; 8]; 4] = [
        core::array::from_fn(|c| sign(c, 1) * sign(c, 2)),
        core::array::from_fn(|c| sign(c, 0) * sign(c, 2)),
        core::array::from_fn(|c| sign(c, 0) * sign(c, 1)),
        core::array::from_fn(|c| sign(c, 0) * sign(c, 1) * sign(c, 2)),
    ];
    let scale = kappa * h * h * h / (8.0 * h * h);
    let mut k = [[0.0; 24]; 24];
    for m in &modes {
        for a in 0..8 {
            for b in 0..8 {
                for d in 0..3 {
                    k[3 * a + d][3 * b + d] += scale * m[a] * m[b];
                }
            }
        }
    }
    k
}

fn mat24_mul_vec(k: &Mat24, v: &[f64; 24]) -> [f64; 24] {
    core::array::from_fn(|i| dot24(&k[i], v))
}

fn dot24(a: &[f64; 24], b: &[f64; 24]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `Ψ = ½‖G·u_e − Â·r‖²` for a given rotation `r`.
pub fn sample_energy(g: &ShapeGradients, u_e: &[f64; 24], a: &Mat3, r: &Mat3) -> f64 {
    0.5 * (g.deformation_gradient(u_e) - *r * *a).frobenius_sq()
}

/// `∇Ψ = Gᵀ(G·u_e − Â·r)`. With `r` the optimal rotation this is the exact
/// gradient of the rotation-minimized energy.
pub fn sample_gradient(g: &ShapeGradients, u_e: &[f64; 24], a: &Mat3, r: &Mat3) -> [f64; 24] {
    let p = g.deformation_gradient(u_e) - *r * *a;
    g.apply_transpose(&p.to_vec9())
}

/// `Gᵀ·M·G` for a 9×9 matrix `M`.
fn congruence(g: &ShapeGradients, m: &Mat9) -> Mat24 {
    let gd = g.dense();
    // mg = M·G (9×24)
    let mut mg = [[0.0; 24]; 9];
    for i in 0..9 {
        for k in 0..9 {
            let mik = m[i][k];
            if mik == 0.0 {
                continue;
            }
            for j in 0..24 {
                mg[i][j] += mik * gd[k][j];
            }
        }
    }
    let mut out = [[0.0; 24]; 24];
    for i in 0..9 {
        for a in 0..24 {
            let ga = gd[i][a];
            if ga == 0.0 {
                continue;
            }
            for b in 0..24 {
                out[a][b] += ga * mg[i][b];
            }
        }
    }
    out
}

/// `∂∇Ψ/∂u_e = GᵀG − GᵀÂ·H_R·ÂG`. Also returns the number of clamped
/// rotation-gradient denominators.
pub fn sample_hessian_u(g: &ShapeGradients, a: &Mat3, factors: &crate::kernels::PolarFactors) -> (Mat24, u32) {
    let rg = rotation_gradient(factors);
    let ah = hat_sym(a);
    let mut m = mat9_mul(&mat9_mul(&ah, &rg.h), &ah);
    for (i, row) in m.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v = -*v;
        }
        row[i] += 1.0;
    }
    (congruence(g, &m), rg.clamped)
}

/// `∂∇Ψ/∂a = −GᵀR̂ − GᵀÂ·H_R·F̂` (24×9, columns over `vec(A)`), evaluated
/// at the optimal rotation for `u_e`.
pub fn sample_hessian_a(g: &ShapeGradients, u_e: &[f64; 24], a: &Mat3) -> ([[f64; 9]; 24], u32) {
    let f = g.deformation_gradient(u_e);
    let pf = polar_decompose(&(f * *a));
    let rg = rotation_gradient(&pf);
    let mut m = mat9_mul(&mat9_mul(&hat_sym(a), &rg.h), &hat_f(&f));
    let rh = hat_r(&pf.r);
    for i in 0..9 {
        for j in 0..9 {
            m[i][j] = -(m[i][j] + rh[i][j]);
        }
    }
    let gd = g.dense();
    let mut out = [[0.0; 9]; 24];
    for (c, row) in out.iter_mut().enumerate() {
        for j in 0..9 {
            row[j] = (0..9).map(|i| gd[i][c] * m[i][j]).sum();
        }
    }
    (out, rg.clamped)
}

/// [`sample_hessian_a`] chained through `∂vec(A)/∂b` (24×6).
pub fn sample_hessian_b(g: &ShapeGradients, u_e: &[f64; 24], a: &Mat3) -> ([[f64; 6]; 24], u32) {
    let (ha, clamped) = sample_hessian_a(g, u_e, a);
    let mut out = [[0.0; 6]; 24];
    for (o, row) in out.iter_mut().zip(ha.iter()) {
        for k in 0..6 {
            o[k] = (0..9).map(|j| row[j] * ACTUATION_JACOBIAN[j][k]).sum();
        }
    }
    (out, clamped)
}

/// `vᵀ·∂∇Ψ/∂b` for a 24-vector `v`, without forming the 24×6 block:
/// `−Jᵀ(R̂ᵀ·Gv + F̂ᵀ·H_R·Â·Gv)`.
pub fn sample_hessian_b_vjp(g: &ShapeGradients, u_e: &[f64; 24], a: &Mat3, v: &[f64; 24]) -> ([f64; 6], u32) {
    let f = g.deformation_gradient(u_e);
    let pf = polar_decompose(&(f * *a));
    let rg = rotation_gradient(&pf);
    let gv: Vec9 = g.apply(v);
    let t1 = mat9_transpose_mul_vec(&hat_r(&pf.r), &gv);
    let t2 = mat9_mul_vec(&rg.h, &mat9_transpose_mul_vec(&hat_sym(a), &gv));
    let t2 = mat9_transpose_mul_vec(&hat_f(&f), &t2);
    let sum: Vec9 = core::array::from_fn(|i| -(t1[i] + t2[i]));
    (chain_actuation_gradient(&sum), rg.clamped)
}
