//! Implicit networks: the modulated sine actuation network, the jaw network,
//! the resolution branch and the latent encoder, with exact reverse-mode
//! gradients.
//!
//! A forward pass is split in two. [`ShapeField::shape`] runs everything
//! that depends only on the latent code (modulations, effective weights,
//! jaw parameters) once per shape; [`ShapeField::forward_actuation`] then
//! evaluates any number of material points against that context.

mod jaw;
mod mlp;
mod params;
mod siren;

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kernels::ActuationParams;
use crate::linalg::{cos, sin, sqrt, Vec3};
use crate::par;
use crate::{Error, Result};

pub use jaw::{JawParams, JawTransform};
pub use params::{ParamStore, Tensor};

use mlp::{Init, Mlp, MlpCache};
use siren::{PointTrace, SineNet};

/// Length of the positional encoding of the resolution scalar.
pub const RESOLUTION_ENCODING: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionConfig {
    pub hidden: usize,
    /// Sample count mapped to 1 before positional encoding.
    pub reference_count: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JawConfig {
    pub hidden: usize,
    pub pivot: Vec3,
}

/// How a latent code is obtained for a shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EncoderConfig {
    /// Three leaky fully connected layers from a shape descriptor.
    Descriptor { dim: usize, hidden: usize },
    /// One learned latent code per training frame.
    AutoDecoder { frames: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub width: usize,
    pub depth: usize,
    pub omega0: f64,
    pub latent_dim: usize,
    pub modulation_hidden: usize,
    pub leaky_slope: f64,
    pub resolution: Option<ResolutionConfig>,
    pub jaw: Option<JawConfig>,
    pub encoder: EncoderConfig,
    /// Material points are mapped to `(x − center)/half_extent`.
    pub domain_center: Vec3,
    pub domain_half_extent: f64,
}

impl FieldConfig {
    /// Default sizes (about 0.3M parameters) for a domain given by its
    /// bounding box.
    pub fn new(encoder: EncoderConfig, lo: Vec3, hi: Vec3) -> Self {
        let mut cfg = FieldConfig {
            width: 256,
            depth: 4,
            omega0: 30.0,
            latent_dim: 64,
            modulation_hidden: 128,
            leaky_slope: 0.01,
            resolution: None,
            jaw: None,
            encoder,
            domain_center: [0.0; 3],
            domain_half_extent: 1.0,
        };
        cfg.set_domain(lo, hi);
        cfg
    }

    pub fn set_domain(&mut self, lo: Vec3, hi: Vec3) {
        self.domain_center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
        let half = (0..3).map(|i| 0.5 * (hi[i] - lo[i])).fold(0.0, f64::max);
        self.domain_half_extent = if half > 0.0 { half } else { 1.0 };
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 || self.latent_dim == 0 || self.modulation_hidden == 0 {
            return Err(Error::InvalidInput("network dimensions must be at least 1".into()));
        }
        if !(self.omega0 > 0.0) || !(self.domain_half_extent > 0.0) {
            return Err(Error::InvalidInput("omega0 and the domain half extent must be positive".into()));
        }
        if !(self.leaky_slope >= 0.0) {
            return Err(Error::InvalidInput("leaky slope must be non-negative".into()));
        }
        if let Some(r) = &self.resolution {
            if r.hidden == 0 || !(r.reference_count > 0.0) {
                return Err(Error::InvalidInput("resolution branch needs hidden ≥ 1 and a positive reference count".into()));
            }
        }
        if let Some(j) = &self.jaw {
            if j.hidden == 0 {
                return Err(Error::InvalidInput("jaw network needs hidden ≥ 1".into()));
            }
        }
        match self.encoder {
            EncoderConfig::Descriptor { dim, hidden } if dim == 0 || hidden == 0 => {
                Err(Error::InvalidInput("descriptor encoder needs dim ≥ 1 and hidden ≥ 1".into()))
            }
            EncoderConfig::AutoDecoder { frames: 0 } => Err(Error::InvalidInput("auto-decoder needs at least one frame".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
struct Layout {
    sine: SineNet,
    modulation: Mlp,
    resolution: Option<Mlp>,
    jaw: Option<Mlp>,
    encoder: Option<Mlp>,
    latents: Option<usize>,
}

impl Layout {
    fn register(cfg: &FieldConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let slope = cfg.leaky_slope;
        let sine = SineNet::register(store, cfg.width, cfg.depth, cfg.omega0, rng);
        let mod_out: usize = sine.modulation_dims().iter().sum();
        let m = cfg.modulation_hidden;
        let modulation = Mlp::register(
            store,
            "mod",
            &[cfg.latent_dim, m, mod_out],
            slope,
            Init::Uniform(0.01 / sqrt(m as f64)),
            rng,
        );
        let resolution = cfg.resolution.as_ref().map(|r| {
            Mlp::register(store, "res", &[RESOLUTION_ENCODING, r.hidden, r.hidden, cfg.latent_dim], slope, Init::Zero, rng)
        });
        let jaw = cfg
            .jaw
            .as_ref()
            .map(|j| Mlp::register(store, "jaw", &[cfg.latent_dim, j.hidden, j.hidden, 5], slope, Init::Zero, rng));
        let (encoder, latents) = match cfg.encoder {
            EncoderConfig::Descriptor { dim, hidden } => {
                let bound = 1.0 / sqrt(hidden as f64);
                (Some(Mlp::register(store, "enc", &[dim, hidden, hidden, cfg.latent_dim], slope, Init::Uniform(bound), rng)), None)
            }
            EncoderConfig::AutoDecoder { frames } => {
                let data = mlp::uniform(rng, frames * cfg.latent_dim, 0.01);
                (None, Some(store.push("enc.latents", &[frames, cfg.latent_dim], data)))
            }
        };
        Layout { sine, modulation, resolution, jaw, encoder, latents }
    }
}

/// Where a shape's latent code comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum LatentSource {
    Descriptor(Vec<f64>),
    Frame(usize),
}

/// A latent code together with what its backward pass needs.
#[derive(Clone, Debug)]
pub struct Latent {
    pub z: Vec<f64>,
    source: LatentSource,
    cache: Option<MlpCache>,
    version: u64,
}

impl Latent {
    pub fn source(&self) -> &LatentSource {
        &self.source
    }
}

/// Everything that depends on one latent code: resolution-adjusted latent,
/// modulation vectors, effective weights and jaw parameters.
#[derive(Clone, Debug)]
pub struct ShapeContext {
    pub z: Vec<f64>,
    z_eff: Vec<f64>,
    resolution: Option<MlpCache>,
    modulation: MlpCache,
    a: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    jaw: Option<(JawParams, MlpCache)>,
    version: u64,
}

impl ShapeContext {
    /// Per-layer modulation coefficients.
    pub fn modulations(&self) -> &[Vec<f64>] {
        &self.a
    }

    /// Latent code after adding the resolution branch.
    pub fn effective_latent(&self) -> &[f64] {
        &self.z_eff
    }

    pub fn jaw_params(&self) -> Option<JawParams> {
        self.jaw.as_ref().map(|(p, _)| *p)
    }
}

/// Actuation offsets for a batch of points plus activations for backward.
#[derive(Clone, Debug)]
pub struct ActuationBatch {
    pub params: Vec<ActuationParams>,
    traces: Vec<PointTrace>,
    version: u64,
}

/// The full set of networks and their parameters.
#[derive(Clone, Debug)]
pub struct ShapeField {
    config: FieldConfig,
    params: ParamStore,
    layout: Layout,
    version: u64,
}

impl ShapeField {
    pub fn new(config: FieldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layout = Layout::register(&config, &mut params, &mut rng);
        Ok(ShapeField { config, params, layout, version: 0 })
    }

    /// Rebuilds a field from stored parameters; names and shapes must match
    /// the configuration exactly.
    pub fn from_params(config: FieldConfig, params: ParamStore) -> Result<Self> {
        let mut field = ShapeField::new(config, 0)?;
        field.set_params(params)?;
        Ok(field)
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Mutable access to the parameters. Invalidates every cached context.
    pub fn params_mut(&mut self) -> &mut ParamStore {
        self.version += 1;
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamStore) -> Result<()> {
        if !params.same_layout(&self.params) {
            return Err(Error::Dimension("parameter names or shapes do not match the field configuration".into()));
        }
        self.version += 1;
        self.params = params;
        Ok(())
    }

    /// Zero-filled gradient buffer with the parameter layout.
    pub fn zero_grads(&self) -> ParamStore {
        self.params.zeros_like()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn has_jaw(&self) -> bool {
        self.layout.jaw.is_some()
    }

    pub fn has_resolution_branch(&self) -> bool {
        self.layout.resolution.is_some()
    }

    fn check_finite(&self) -> Result<()> {
        if let Some(t) = self.params.tensors().iter().find(|t| t.data.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite(format!("parameter tensor {}", t.name)));
        }
        Ok(())
    }

    fn check_version(&self, version: u64, what: &str) -> Result<()> {
        if version != self.version {
            return Err(Error::StaleCache(format!("{what} was computed with parameters that have since changed")));
        }
        Ok(())
    }

    fn check_grads(&self, grads: &ParamStore) -> Result<()> {
        if !grads.same_layout(&self.params) {
            return Err(Error::Dimension("gradient buffer layout does not match the parameters".into()));
        }
        Ok(())
    }

    pub fn encode(&self, source: LatentSource) -> Result<Latent> {
        let dim = self.config.latent_dim;
        let (z, cache) = match (&source, &self.config.encoder) {
            (LatentSource::Descriptor(d), EncoderConfig::Descriptor { dim: ddim, .. }) => {
                if d.len() != *ddim {
                    return Err(Error::Dimension(format!("descriptor has {} entries, expected {ddim}", d.len())));
                }
                if d.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("shape descriptor".into()));
                }
                let enc = self.layout.encoder.as_ref().expect("descriptor encoder registered");
                let (z, cache) = enc.forward(&self.params, d);
                (z, Some(cache))
            }
            (LatentSource::Frame(f), EncoderConfig::AutoDecoder { frames }) => {
                if f >= frames {
                    return Err(Error::InvalidInput(format!("frame {f} out of range for {frames} latent codes")));
                }
                let id = self.layout.latents.expect("latent table registered");
                (self.params.data(id)[f * dim..(f + 1) * dim].to_vec(), None)
            }
            _ => return Err(Error::InvalidInput("latent source does not match the encoder configuration".into())),
        };
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("latent code".into()));
        }
        Ok(Latent { z, source, cache, version: self.version })
    }

    /// Chains `∂L/∂z` into the encoder parameters or the latent table.
    pub fn backward_encode(&self, latent: &Latent, dz: &[f64], grads: &mut ParamStore) -> Result<()> {
        self.check_version(latent.version, "latent code")?;
        self.check_grads(grads)?;
        if dz.len() != self.config.latent_dim {
            return Err(Error::Dimension(format!("latent gradient has {} entries", dz.len())));
        }
        match (&latent.source, &latent.cache) {
            (LatentSource::Descriptor(_), Some(cache)) => {
                let enc = self.layout.encoder.as_ref().expect("descriptor encoder registered");
                enc.backward(&self.params, cache, dz, grads);
            }
            (LatentSource::Frame(f), _) => {
                let dim = self.config.latent_dim;
                let id = self.layout.latents.expect("latent table registered");
                for (g, d) in grads.data_mut(id)[f * dim..(f + 1) * dim].iter_mut().zip(dz.iter()) {
                    *g += d;
                }
            }
            _ => unreachable!("descriptor latents always carry a cache"),
        }
        Ok(())
    }

    fn resolution_encoding(&self, count: f64) -> [f64; RESOLUTION_ENCODING] {
        let rho = count / self.config.resolution.as_ref().map_or(1.0, |r| r.reference_count);
        [sin(rho), cos(rho), sin(2.0 * rho), cos(2.0 * rho)]
    }

    /// Runs the per-shape part of the forward pass. `resolution` is the
    /// total sample count; it is ignored when the field has no resolution
    /// branch, and the branch is skipped when it is `None`.
    pub fn shape(&self, z: &[f64], resolution: Option<f64>) -> Result<ShapeContext> {
        if z.len() != self.config.latent_dim {
            return Err(Error::Dimension(format!("latent code has {} entries, expected {}", z.len(), self.config.latent_dim)));
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("latent code".into()));
        }
        self.check_finite()?;
        let mut z_eff = z.to_vec();
        let mut res_cache = None;
        if let (Some(res), Some(count)) = (&self.layout.resolution, resolution) {
            if !(count > 0.0) || !count.is_finite() {
                return Err(Error::InvalidInput(format!("resolution must be a positive sample count, got {count}")));
            }
            let (offset, cache) = res.forward(&self.params, &self.resolution_encoding(count));
            z_eff.iter_mut().zip(offset.iter()).for_each(|(a, b)| *a += b);
            res_cache = Some(cache);
        }
        let (m, modulation) = self.layout.modulation.forward(&self.params, &z_eff);
        let mut a = Vec::with_capacity(self.config.depth);
        let mut offset = 0;
        for n in self.layout.sine.modulation_dims() {
            a.push(m[offset..offset + n].iter().map(|v| 1.0 + v).collect::<Vec<f64>>());
            offset += n;
        }
        let weights = self.layout.sine.effective_weights(&self.params, &a);
        let jaw = self.layout.jaw.as_ref().map(|net| {
            let (theta, cache) = net.forward(&self.params, z);
            let mut p = [0.0; 5];
            p.copy_from_slice(&theta);
            (JawParams(p), cache)
        });
        Ok(ShapeContext { z: z.to_vec(), z_eff, resolution: res_cache, modulation, a, weights, jaw, version: self.version })
    }

    /// The rigid jaw transform of a shape, if the field has a jaw network.
    pub fn jaw(&self, ctx: &ShapeContext) -> Option<JawTransform> {
        let pivot = self.config.jaw.as_ref()?.pivot;
        ctx.jaw.as_ref().map(|(p, _)| JawTransform::new(*p, pivot))
    }

    fn normalize(&self, x: Vec3) -> [f64; 3] {
        let c = self.config.domain_center;
        let s = 1.0 / self.config.domain_half_extent;
        [(x[0] - c[0]) * s, (x[1] - c[1]) * s, (x[2] - c[2]) * s]
    }

    fn eval_points(&self, weights: &[&[f64]], points: &[Vec3], keep: bool) -> Vec<([f64; 6], Option<PointTrace>)> {
        par::map_indexed(points.len(), |i| self.layout.sine.eval_point(&self.params, weights, self.normalize(points[i]), keep))
    }

    /// Actuation offsets at material points, keeping activations for
    /// [`ShapeField::backward`].
    pub fn forward_actuation(&self, ctx: &ShapeContext, points: &[Vec3]) -> Result<ActuationBatch> {
        self.check_version(ctx.version, "shape context")?;
        let weights: Vec<&[f64]> = ctx.weights.iter().map(|w| w.as_slice()).collect();
        let (params, traces) = self
            .eval_points(&weights, points, true)
            .into_iter()
            .map(|(b, t)| (ActuationParams(b), t.expect("trace requested")))
            .unzip();
        Ok(ActuationBatch { params, traces, version: self.version })
    }

    /// Actuation offsets without keeping activations.
    pub fn eval_actuation(&self, ctx: &ShapeContext, points: &[Vec3]) -> Result<Vec<ActuationParams>> {
        self.check_version(ctx.version, "shape context")?;
        let weights: Vec<&[f64]> = ctx.weights.iter().map(|w| w.as_slice()).collect();
        Ok(self.eval_points(&weights, points, false).into_iter().map(|(b, _)| ActuationParams(b)).collect())
    }

    /// The same network with every modulation removed, i.e. evaluated with
    /// the shared weights `Ŵ` directly.
    pub fn eval_actuation_unmodulated(&self, points: &[Vec3]) -> Result<Vec<ActuationParams>> {
        self.check_finite()?;
        let weights: Vec<&[f64]> = self.layout.sine.layers.iter().map(|l| self.params.data(l.w)).collect();
        Ok(self.eval_points(&weights, points, false).into_iter().map(|(b, _)| ActuationParams(b)).collect())
    }

    /// Reverse pass for one shape. Accumulates parameter gradients into
    /// `grads` and returns `∂L/∂z`, which the caller chains through
    /// [`ShapeField::backward_encode`] or uses directly.
    pub fn backward(
        &self,
        ctx: &ShapeContext,
        actuation: Option<(&ActuationBatch, &[[f64; 6]])>,
        grad_jaw: Option<&[f64; 5]>,
        grads: &mut ParamStore,
    ) -> Result<Vec<f64>> {
        self.check_version(ctx.version, "shape context")?;
        self.check_grads(grads)?;
        let mut dz = alloc::vec![0.0; self.config.latent_dim];
        if let Some((batch, grad_b)) = actuation {
            self.check_version(batch.version, "actuation batch")?;
            if grad_b.len() != batch.traces.len() {
                return Err(Error::Dimension(format!(
                    "{} actuation gradients for {} points",
                    grad_b.len(),
                    batch.traces.len()
                )));
            }
            if grad_b.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("actuation gradient".into()));
            }
            let sine = &self.layout.sine;
            let dw_eff = sine.backward_batch(&self.params, &ctx.weights, &batch.traces, grad_b, grads);
            let da = sine.split_weight_gradients(&self.params, &ctx.a, &dw_eff, grads);
            let dm: Vec<f64> = da.into_iter().flatten().collect();
            let dz_eff = self.layout.modulation.backward(&self.params, &ctx.modulation, &dm, grads);
            if let (Some(res), Some(cache)) = (&self.layout.resolution, &ctx.resolution) {
                res.backward(&self.params, cache, &dz_eff, grads);
            }
            dz.iter_mut().zip(dz_eff.iter()).for_each(|(a, b)| *a += b);
        }
        if let Some(g) = grad_jaw {
            if !g.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("jaw gradient".into()));
            }
            if let (Some(net), Some((_, cache))) = (&self.layout.jaw, &ctx.jaw) {
                let d = net.backward(&self.params, cache, g, grads);
                dz.iter_mut().zip(d.iter()).for_each(|(a, b)| *a += b);
            }
        }
        Ok(dz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tiny(encoder: EncoderConfig) -> FieldConfig {
        let mut cfg = FieldConfig::new(encoder, [0.0; 3], [3.0, 1.0, 1.0]);
        cfg.width = 8;
        cfg.latent_dim = 4;
        cfg.modulation_hidden = 6;
        cfg
    }

    #[test]
    fn default_size_is_about_a_third_of_a_million() {
        let cfg = FieldConfig::new(EncoderConfig::Descriptor { dim: 16, hidden: 64 }, [0.0; 3], [1.0; 3]);
        let n = ShapeField::new(cfg, 0).unwrap().num_parameters();
        assert!((250_000..400_000).contains(&n), "{n}");
    }

    #[test]
    fn initial_actuation_is_identity() {
        let field = ShapeField::new(tiny(EncoderConfig::AutoDecoder { frames: 2 }), 3).unwrap();
        let z = field.encode(LatentSource::Frame(1)).unwrap();
        let ctx = field.shape(&z.z, None).unwrap();
        let b = field.eval_actuation(&ctx, &[[0.5, 0.2, 0.9], [2.9, 0.0, 0.1]]).unwrap();
        assert!(b.iter().all(|p| p.0 == [0.0; 6]));
    }

    #[test]
    fn stale_context_is_rejected() {
        let mut field = ShapeField::new(tiny(EncoderConfig::AutoDecoder { frames: 1 }), 3).unwrap();
        let ctx = field.shape(&[0.1; 4], None).unwrap();
        field.params_mut();
        assert!(matches!(field.eval_actuation(&ctx, &[[0.0; 3]]), Err(Error::StaleCache(_))));
    }

    #[test]
    fn mismatched_source_is_rejected() {
        let field = ShapeField::new(tiny(EncoderConfig::Descriptor { dim: 3, hidden: 5 }), 0).unwrap();
        assert!(field.encode(LatentSource::Frame(0)).is_err());
        assert!(matches!(field.encode(LatentSource::Descriptor(vec![0.0; 2])), Err(Error::Dimension(_))));
        let a = field.encode(LatentSource::Descriptor(vec![0.0; 3])).unwrap();
        let b = field.encode(LatentSource::Descriptor(vec![0.0; 3])).unwrap();
        assert_eq!(a.z, b.z);
    }
}
