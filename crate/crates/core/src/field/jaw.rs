use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::{add3, cos, dot3, sin, sub3, Mat3, Vec3};

/// Rigid jaw motion `(θx, θy, tx, ty, tz)`: rotate about `x` by `θx`, then
/// about `y` by `θy`, both about the pivot, then translate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JawParams(pub [f64; 5]);

/// The rigid transform of a [`JawParams`] about a fixed pivot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JawTransform {
    pub params: JawParams,
    pub pivot: Vec3,
    pub rotation: Mat3,
}

fn rot_x_derivative(t: f64) -> Mat3 {
    let (s, c) = (sin(t), cos(t));
    Mat3([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])
}

fn rot_y_derivative(t: f64) -> Mat3 {
    let (s, c) = (sin(t), cos(t));
    Mat3([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])
}

impl JawTransform {
    pub fn new(params: JawParams, pivot: Vec3) -> Self {
        let [tx, ty, ..] = params.0;
        JawTransform { params, pivot, rotation: Mat3::rot_y(ty) * Mat3::rot_x(tx) }
    }

    pub fn translation(&self) -> Vec3 {
        [self.params.0[2], self.params.0[3], self.params.0[4]]
    }

    pub fn apply_point(&self, x: Vec3) -> Vec3 {
        add3(add3(self.pivot, self.rotation.mul_vec(sub3(x, self.pivot))), self.translation())
    }

    pub fn apply(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.iter().map(|&x| self.apply_point(x)).collect()
    }

    /// `∂L/∂Θ` given `∂L/∂x'` for every transformed point.
    pub fn vjp(&self, points: &[Vec3], grad_out: &[Vec3]) -> [f64; 5] {
        let [tx, ty, ..] = self.params.0;
        let d_x = Mat3::rot_y(ty) * rot_x_derivative(tx);
        let d_y = rot_y_derivative(ty) * Mat3::rot_x(tx);
        let mut g = [0.0; 5];
        for (&x, &gx) in points.iter().zip(grad_out.iter()) {
            let r = sub3(x, self.pivot);
            g[0] += dot3(gx, d_x.mul_vec(r));
            g[1] += dot3(gx, d_y.mul_vec(r));
            g[2] += gx[0];
            g[3] += gx[1];
            g[4] += gx[2];
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_is_identity() {
        let t = JawTransform::new(JawParams::default(), [0.3, -0.2, 1.0]);
        let p = [1.5, 2.0, -0.25];
        assert_eq!(t.apply_point(p), p);
    }

    #[test]
    fn pure_translation() {
        let t = JawTransform::new(JawParams([0.0, 0.0, 1.0, 0.0, 0.0]), [0.0; 3]);
        assert_eq!(t.apply_point([0.5, 0.5, 0.5]), [1.5, 0.5, 0.5]);
    }

    #[test]
    fn rotation_is_proper() {
        let t = JawTransform::new(JawParams([0.4, -1.1, 0.0, 0.0, 0.0]), [0.0; 3]);
        let r = t.rotation;
        let rtr = r.transpose() * r;
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((rtr.0[i][j] - e).abs() < 1e-14);
            }
        }
        assert!((r.det() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let pivot = [0.2, 0.1, -0.3];
        let pts = [[1.0, 0.5, 0.0], [0.0, -1.0, 2.0], [0.3, 0.3, 0.3]];
        let x0 = [[0.9, 0.4, 0.2], [0.1, -1.2, 1.8], [0.0, 0.5, 0.1]];
        let probe = |th: [f64; 5]| -> f64 {
            let t = JawTransform::new(JawParams(th), pivot);
            pts.iter()
                .zip(x0.iter())
                .map(|(&p, &q)| {
                    let d = sub3(t.apply_point(p), q);
                    dot3(d, d)
                })
                .sum()
        };
        let th = [0.1, -0.05, 0.02, 0.0, 0.01];
        let t = JawTransform::new(JawParams(th), pivot);
        let grad_out: Vec<Vec3> =
            pts.iter().zip(x0.iter()).map(|(&p, &q)| crate::linalg::scale3(sub3(t.apply_point(p), q), 2.0)).collect();
        let g = t.vjp(&pts, &grad_out);
        let eps = 1e-6;
        for k in 0..5 {
            let (mut tp, mut tm) = (th, th);
            tp[k] += eps;
            tm[k] -= eps;
            let fd = (probe(tp) - probe(tm)) / (2.0 * eps);
            assert!((g[k] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "{k}: {} vs {fd}", g[k]);
        }
    }
}
