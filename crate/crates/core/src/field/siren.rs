//! Modulated sine network mapping normalized material points to actuation
//! offsets.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::mlp::{uniform, Dense, Init};
use super::params::ParamStore;
use crate::linalg::{cos, sin, sqrt};
use crate::par;

/// Points per backward chunk. Fixed so that reductions do not depend on the
/// worker count.
const POINT_CHUNK: usize = 128;

#[derive(Clone, Debug)]
pub(crate) struct SineNet {
    /// `(Ŵ, bias)` ids per sine layer; `Ŵ` is `[width, n_in]`.
    pub layers: Vec<Dense>,
    pub out: Dense,
    pub omega0: f64,
}

impl SineNet {
    pub fn register(store: &mut ParamStore, width: usize, depth: usize, omega0: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(depth);
        for k in 0..depth {
            let n_in = if k == 0 { 3 } else { width };
            let bound = if k == 0 { 1.0 / n_in as f64 } else { sqrt(6.0 / n_in as f64) / omega0 };
            let w = uniform(rng, width * n_in, bound);
            let b = uniform(rng, width, 1.0 / sqrt(n_in as f64));
            let wid = store.push(&alloc::format!("act.l{k}.weight"), &[width, n_in], w);
            let bid = store.push(&alloc::format!("act.l{k}.bias"), &[width], b);
            layers.push(Dense { w: wid, b: bid, n_in, n_out: width });
        }
        let out = Dense::register(store, "act.out", width, 6, Init::Zero, rng);
        SineNet { layers, out, omega0 }
    }

    /// Input dimension of every sine layer, i.e. the length of its
    /// modulation vector.
    pub fn modulation_dims(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.n_in).collect()
    }

    /// `Ŵ·diag(a)` for every layer.
    pub fn effective_weights(&self, p: &ParamStore, a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .zip(a.iter())
            .map(|(l, a)| {
                let w = p.data(l.w);
                let mut out = w.to_vec();
                for row in out.chunks_exact_mut(l.n_in) {
                    for (x, ai) in row.iter_mut().zip(a.iter()) {
                        *x *= ai;
                    }
                }
                out
            })
            .collect()
    }

    /// Evaluates one point with explicit layer weights. Returns the output
    /// and, when `keep` is set, the layer inputs and pre-activations.
    pub fn eval_point(
        &self,
        p: &ParamStore,
        weights: &[&[f64]],
        x: [f64; 3],
        keep: bool,
    ) -> ([f64; 6], Option<PointTrace>) {
        let mut h: Vec<f64> = x.to_vec();
        let mut trace = keep.then(|| PointTrace { inputs: Vec::new(), pre: Vec::new() });
        for (l, w) in self.layers.iter().zip(weights.iter()) {
            let bias = p.data(l.b);
            let pre: Vec<f64> = (0..l.n_out)
                .map(|j| {
                    let row = &w[j * l.n_in..(j + 1) * l.n_in];
                    bias[j] + row.iter().zip(h.iter()).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let next: Vec<f64> = pre.iter().map(|&v| sin(self.omega0 * v)).collect();
            if let Some(t) = trace.as_mut() {
                t.inputs.push(core::mem::take(&mut h));
                t.pre.push(pre);
            }
            h = next;
        }
        let y = self.out.forward(p, &h);
        if let Some(t) = trace.as_mut() {
            t.inputs.push(h);
        }
        let mut b = [0.0; 6];
        b.copy_from_slice(&y);
        (b, trace)
    }

    /// Reverse pass over a batch. Accumulates output-layer and bias
    /// gradients into `g` and returns `Σ_p δ·hᵀ` per sine layer, i.e. the
    /// gradient with respect to the effective weights.
    pub fn backward_batch(
        &self,
        p: &ParamStore,
        weights: &[Vec<f64>],
        traces: &[PointTrace],
        grad_b: &[[f64; 6]],
        g: &mut ParamStore,
    ) -> Vec<Vec<f64>> {
        let sizes: Vec<usize> = self.layers.iter().map(|l| l.n_in * l.n_out).collect();
        let width = self.layers.first().map_or(0, |l| l.n_out);
        let out_w = p.data(self.out.w);
        let partials = par::map_chunks(traces.len(), POINT_CHUNK, |range| {
            let mut dw_eff: Vec<Vec<f64>> = sizes.iter().map(|&n| alloc::vec![0.0; n]).collect();
            let mut dbias: Vec<Vec<f64>> = self.layers.iter().map(|l| alloc::vec![0.0; l.n_out]).collect();
            let mut dout_w = alloc::vec![0.0; 6 * width];
            let mut dout_b = [0.0; 6];
            for i in range {
                let t = &traces[i];
                let gb = &grad_b[i];
                let last = &t.inputs[self.layers.len()];
                let mut dh = alloc::vec![0.0; width];
                for o in 0..6 {
                    let d = gb[o];
                    dout_b[o] += d;
                    if d == 0.0 {
                        continue;
                    }
                    for k in 0..width {
                        dout_w[o * width + k] += d * last[k];
                        dh[k] += d * out_w[o * width + k];
                    }
                }
                for (li, l) in self.layers.iter().enumerate().rev() {
                    let delta: Vec<f64> = dh
                        .iter()
                        .zip(t.pre[li].iter())
                        .map(|(d, &pre)| d * self.omega0 * cos(self.omega0 * pre))
                        .collect();
                    let input = &t.inputs[li];
                    let w = &weights[li];
                    let dw = &mut dw_eff[li];
                    let mut dx = alloc::vec![0.0; l.n_in];
                    for j in 0..l.n_out {
                        let d = delta[j];
                        dbias[li][j] += d;
                        if d == 0.0 {
                            continue;
                        }
                        let row = j * l.n_in;
                        for k in 0..l.n_in {
                            dw[row + k] += d * input[k];
                            dx[k] += d * w[row + k];
                        }
                    }
                    dh = dx;
                }
            }
            (dw_eff, dbias, dout_w, dout_b)
        });
        let mut dw_eff: Vec<Vec<f64>> = sizes.iter().map(|&n| alloc::vec![0.0; n]).collect();
        for (dw, db, dow, dob) in partials {
            for (acc, part) in dw_eff.iter_mut().zip(dw.iter()) {
                acc.iter_mut().zip(part.iter()).for_each(|(a, b)| *a += b);
            }
            for (l, part) in self.layers.iter().zip(db.iter()) {
                g.data_mut(l.b).iter_mut().zip(part.iter()).for_each(|(a, b)| *a += b);
            }
            g.data_mut(self.out.w).iter_mut().zip(dow.iter()).for_each(|(a, b)| *a += b);
            g.data_mut(self.out.b).iter_mut().zip(dob.iter()).for_each(|(a, b)| *a += b);
        }
        dw_eff
    }

    /// Splits effective-weight gradients into `∂L/∂Ŵ` (accumulated into `g`)
    /// and `∂L/∂a` (returned).
    pub fn split_weight_gradients(
        &self,
        p: &ParamStore,
        a: &[Vec<f64>],
        dw_eff: &[Vec<f64>],
        g: &mut ParamStore,
    ) -> Vec<Vec<f64>> {
        let mut da_all = Vec::with_capacity(self.layers.len());
        for ((l, a), dw) in self.layers.iter().zip(a.iter()).zip(dw_eff.iter()) {
            let w = p.data(l.w);
            let mut da = alloc::vec![0.0; l.n_in];
            let gw = g.data_mut(l.w);
            for j in 0..l.n_out {
                for k in 0..l.n_in {
                    let idx = j * l.n_in + k;
                    gw[idx] += dw[idx] * a[k];
                    da[k] += dw[idx] * w[idx];
                }
            }
            da_all.push(da);
        }
        da_all
    }
}

/// Per-point activations kept for the backward pass: layer inputs (the
/// last entry feeds the output layer) and sine pre-activations.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct PointTrace {
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}
