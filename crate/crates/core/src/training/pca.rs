//! Principal components of target surface displacements, used as shape
//! descriptors for the encoder.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::{sqrt, symmetric_eigen, Vec3};
use crate::{Error, Result};

/// Default number of components.
pub const DEFAULT_COMPONENTS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    /// Rest surface the displacements are measured from.
    pub rest: Vec<Vec3>,
    pub mean: Vec<f64>,
    /// Unit-length components; fewer than `dim` when the data has lower
    /// rank, the remaining descriptor entries are zero.
    pub components: Vec<Vec<f64>>,
    pub dim: usize,
}

fn flatten_displacement(rest: &[Vec3], pose: &[Vec3]) -> Vec<f64> {
    rest.iter().zip(pose.iter()).flat_map(|(r, p)| [p[0] - r[0], p[1] - r[1], p[2] - r[2]]).collect()
}

impl PcaBasis {
    /// Fits `dim` components to the displacements of `poses` from `rest`
    /// through the eigen-decomposition of the frame Gram matrix.
    pub fn fit(rest: &[Vec3], poses: &[Vec<Vec3>], dim: usize) -> Result<Self> {
        if poses.iter().any(|p| p.len() != rest.len()) {
            return Err(Error::Dimension("every pose must have the rest vertex count".into()));
        }
        let n = 3 * rest.len();
        let f = poses.len();
        let data: Vec<Vec<f64>> = poses.iter().map(|p| flatten_displacement(rest, p)).collect();
        let mut mean = vec![0.0; n];
        for d in &data {
            mean.iter_mut().zip(d.iter()).for_each(|(m, x)| *m += x / f.max(1) as f64);
        }
        let centered: Vec<Vec<f64>> =
            data.iter().map(|d| d.iter().zip(mean.iter()).map(|(x, m)| x - m).collect()).collect();
        let mut gram = vec![0.0; f * f];
        for i in 0..f {
            for j in 0..=i {
                let v: f64 = centered[i].iter().zip(centered[j].iter()).map(|(a, b)| a * b).sum();
                gram[i * f + j] = v;
                gram[j * f + i] = v;
            }
        }
        let (vals, vecs) = if f > 0 { symmetric_eigen(f, &gram) } else { (vec![], vec![]) };
        let tol = 1e-12 * vals.first().copied().unwrap_or(0.0).max(0.0);
        let mut components = Vec::new();
        for k in 0..f.min(dim) {
            if !(vals[k] > tol) || vals[k] <= 0.0 {
                break;
            }
            let mut c = vec![0.0; n];
            for (i, row) in centered.iter().enumerate() {
                let w = vecs[i * f + k];
                c.iter_mut().zip(row.iter()).for_each(|(a, x)| *a += w * x);
            }
            let s = 1.0 / sqrt(vals[k]);
            c.iter_mut().for_each(|a| *a *= s);
            components.push(c);
        }
        Ok(PcaBasis { rest: rest.to_vec(), mean, components, dim })
    }

    /// Descriptor of a pose: its centered displacement projected on each
    /// component.
    pub fn describe(&self, pose: &[Vec3]) -> Result<Vec<f64>> {
        if pose.len() != self.rest.len() {
            return Err(Error::Dimension("pose vertex count differs from the basis".into()));
        }
        let d = flatten_displacement(&self.rest, pose);
        let mut out = vec![0.0; self.dim];
        for (o, c) in out.iter_mut().zip(self.components.iter()) {
            *o = c.iter().zip(d.iter().zip(self.mean.iter())).map(|(c, (x, m))| c * (x - m)).sum();
        }
        Ok(out)
    }
}
