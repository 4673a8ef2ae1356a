use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A named, shaped block of parameters. Matrices are `[rows, cols]`,
/// row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of named tensors. Gradients and optimizer moments
/// use the same layout via [`ParamStore::zeros_like`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its id.
    pub fn push(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        assert!(!self.index.contains_key(name), "duplicate tensor {name}");
        self.index.insert(name.into(), self.tensors.len());
        self.tensors.push(Tensor { name: name.into(), shape: shape.to_vec(), data });
        self.tensors.len() - 1
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        let mut out = ParamStore::new();
        for t in tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Dimension(format!("tensor {} has shape {:?} but {} values", t.name, t.shape, t.data.len())));
            }
            if out.index.contains_key(&t.name) {
                return Err(Error::InvalidInput(format!("duplicate tensor {}", t.name)));
            }
            out.push(&t.name, &t.shape, t.data);
        }
        Ok(out)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn tensor(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn data(&self, id: usize) -> &[f64] {
        &self.tensors[id].data
    }

    pub fn data_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.tensors[id].data
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in &mut out.tensors {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Whether both stores have identical names and shapes in order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(other.tensors.iter()).all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    /// `self += s·other`.
    pub fn add_scaled(&mut self, other: &ParamStore, s: f64) {
        for (a, b) in self.tensors.iter_mut().zip(other.tensors.iter()) {
            for (x, y) in a.data.iter_mut().zip(b.data.iter()) {
                *x += s * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Zeroes every tensor whose name starts with `prefix`.
    pub fn zero_group(&mut self, prefix: &str) {
        for t in &mut self.tensors {
            if t.name.starts_with(prefix) {
                t.data.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flat_map(|t| t.data.iter()).fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Flat view in tensor order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// `(tensor id, offset)` of a flat index.
    pub fn locate(&self, mut flat: usize) -> Option<(usize, usize)> {
        for (i, t) in self.tensors.iter().enumerate() {
            if flat < t.data.len() {
                return Some((i, flat));
            }
            flat -= t.data.len();
        }
        None
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.iter().map(|t| t.name.clone()).collect()
    }
}
