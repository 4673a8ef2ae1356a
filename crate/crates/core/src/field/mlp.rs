use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use crate::linalg::sqrt;

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    /// Weights and biases uniform in `±bound`.
    Uniform(f64),
    Zero,
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    if bound == 0.0 {
        return alloc::vec![0.0; n];
    }
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Affine layer `y = W·x + bias` with `W` stored `[n_out, n_in]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dense {
    pub w: usize,
    pub b: usize,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    pub fn register(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize, init: Init, rng: &mut ChaCha8Rng) -> Self {
        let (wd, bd) = match init {
            Init::Uniform(bound) => (uniform(rng, n_in * n_out, bound), uniform(rng, n_out, bound)),
            Init::Zero => (alloc::vec![0.0; n_in * n_out], alloc::vec![0.0; n_out]),
        };
        let w = store.push(&alloc::format!("{name}.weight"), &[n_out, n_in], wd);
        let b = store.push(&alloc::format!("{name}.bias"), &[n_out], bd);
        Dense { w, b, n_in, n_out }
    }

    pub fn forward(&self, p: &ParamStore, x: &[f64]) -> Vec<f64> {
        let w = p.data(self.w);
        let b = p.data(self.b);
        (0..self.n_out)
            .map(|o| {
                let row = &w[o * self.n_in..(o + 1) * self.n_in];
                b[o] + row.iter().zip(x.iter()).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward(&self, p: &ParamStore, x: &[f64], dy: &[f64], g: &mut ParamStore) -> Vec<f64> {
        {
            let gw = g.data_mut(self.w);
            for o in 0..self.n_out {
                let d = dy[o];
                if d == 0.0 {
                    continue;
                }
                for (gi, xi) in gw[o * self.n_in..(o + 1) * self.n_in].iter_mut().zip(x.iter()) {
                    *gi += d * xi;
                }
            }
        }
        {
            let gb = g.data_mut(self.b);
            for (gb, d) in gb.iter_mut().zip(dy.iter()) {
                *gb += d;
            }
        }
        let w = p.data(self.w);
        let mut dx = alloc::vec![0.0; self.n_in];
        for o in 0..self.n_out {
            let d = dy[o];
            if d == 0.0 {
                continue;
            }
            for (dxi, wi) in dx.iter_mut().zip(w[o * self.n_in..(o + 1) * self.n_in].iter()) {
                *dxi += d * wi;
            }
        }
        dx
    }
}

/// Stack of affine layers with leaky-ReLU activations between them (none
/// after the last).
#[derive(Clone, Debug)]
pub(crate) struct Mlp {
    pub layers: Vec<Dense>,
    pub slope: f64,
}

/// Inputs of every layer, needed by the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct MlpCache {
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

impl Mlp {
    /// Registers layers `dims[0] → dims[1] → …`; the last layer uses
    /// `last_init`, hidden layers the default fan-in scaling.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        slope: f64,
        last_init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let init = if i + 2 == dims.len() { last_init } else { Init::Uniform(1.0 / sqrt(dims[i] as f64)) };
            layers.push(Dense::register(store, &alloc::format!("{prefix}.fc{i}"), dims[i], dims[i + 1], init, rng));
        }
        Mlp { layers, slope }
    }

    pub fn forward(&self, p: &ParamStore, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let y = l.forward(p, &h);
            inputs.push(h);
            h = if i + 1 < self.layers.len() {
                y.iter().map(|&v| if v > 0.0 { v } else { self.slope * v }).collect()
            } else {
                y.clone()
            };
            preacts.push(y);
        }
        (h, MlpCache { inputs, preacts })
    }

    pub fn backward(&self, p: &ParamStore, cache: &MlpCache, dy: &[f64], g: &mut ParamStore) -> Vec<f64> {
        let mut d = dy.to_vec();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                for (di, &pre) in d.iter_mut().zip(cache.preacts[i].iter()) {
                    if pre <= 0.0 {
                        *di *= self.slope;
                    }
                }
            }
            d = self.layers[i].backward(p, &cache.inputs[i], &d, g);
        }
        d
    }
}
