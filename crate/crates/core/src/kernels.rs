//! 3×3 and 9×9 kernels used by the shape-targeting energy.
//!
//! Conventions:
//! - `vec` flattens row-wise: `vec(M)[3i + j] = M[i][j]`.
//! - [`hat_sym`] expands `A` so that `vec(X·A) = hat_sym(A)·vec(X)`.
//! - [`hat_f`] expands `F` so that `vec(F·A) = hat_f(F)·vec(A)`.

use serde::{Deserialize, Serialize};

use crate::linalg::{abs, cross3, dot3, norm3, scale3, sqrt, sub3, Mat3, Vec3};

pub type Vec9 = [f64; 9];
pub type Mat9 = [[f64; 9]; 9];

/// Row-wise flattening of a 3×3 matrix.
#[inline]
pub fn vec(m: &Mat3) -> Vec9 {
    m.to_vec9()
}

/// Block-diagonal expansion `diag(Aᵀ, Aᵀ, Aᵀ)`; equals `diag(A, A, A)` for
/// the symmetric actuation matrices used throughout.
pub fn hat_sym(a: &Mat3) -> Mat9 {
    let mut out = [[0.0; 9]; 9];
    for blk in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[3 * blk + j][3 * blk + k] = a.0[k][j];
            }
        }
    }
    out
}

/// Expansion with `hat_f(F)[3i + j][3k + j] = F[i][k]`.
pub fn hat_f(f: &Mat3) -> Mat9 {
    let mut out = [[0.0; 9]; 9];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[3 * i + j][3 * k + j] = f.0[i][k];
            }
        }
    }
    out
}

/// Same layout as [`hat_f`], so `vec(R·A) = hat_r(R)·vec(A)`.
pub fn hat_r(r: &Mat3) -> Mat9 {
    hat_f(r)
}

pub fn mat9_mul_vec(m: &Mat9, v: &Vec9) -> Vec9 {
    let mut out = [0.0; 9];
    for (o, row) in out.iter_mut().zip(m.iter()) {
        *o = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
    }
    out
}

pub fn mat9_transpose_mul_vec(m: &Mat9, v: &Vec9) -> Vec9 {
    let mut out = [0.0; 9];
    for (row, vi) in m.iter().zip(v.iter()) {
        for (o, a) in out.iter_mut().zip(row.iter()) {
            *o += a * vi;
        }
    }
    out
}

pub fn mat9_mul(a: &Mat9, b: &Mat9) -> Mat9 {
    let mut out = [[0.0; 9]; 9];
    for i in 0..9 {
        for k in 0..9 {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..9 {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

/// Six strain-like offsets parameterizing a symmetric actuation matrix.
///
/// Layout: `A = [[1+b0, b1, b2], [b1, 1+b3, b4], [b2, b4, 1+b5]]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActuationParams(pub [f64; 6]);

impl ActuationParams {
    pub const IDENTITY: ActuationParams = ActuationParams([0.0; 6]);

    pub fn to_matrix(&self) -> Mat3 {
        actuation_from_params(self)
    }

    /// Inverse of [`actuation_from_params`] for a symmetric matrix; the
    /// upper triangle is read.
    pub fn from_matrix(a: &Mat3) -> Self {
        let m = &a.0;
        ActuationParams([
            m[0][0] - 1.0,
            m[0][1],
            m[0][2],
            m[1][1] - 1.0,
            m[1][2],
            m[2][2] - 1.0,
        ])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

pub fn actuation_from_params(b: &ActuationParams) -> Mat3 {
    let b = &b.0;
    Mat3([
        [1.0 + b[0], b[1], b[2]],
        [b[1], 1.0 + b[3], b[4]],
        [b[2], b[4], 1.0 + b[5]],
    ])
}

/// Constant Jacobian `∂vec(A)/∂b` (9×6).
pub const ACTUATION_JACOBIAN: [[f64; 6]; 9] = [
    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
];

/// Chains a gradient over `vec(A)` into a gradient over `b`.
pub fn chain_actuation_gradient(g: &Vec9) -> [f64; 6] {
    [g[0], g[1] + g[3], g[2] + g[6], g[4], g[5] + g[7], g[8]]
}

/// Factors of `M = U·diag(σ)·Vᵀ = R·S`.
///
/// `U` and `V` are proper rotations; `σ` is sorted so that
/// `σ_x ≥ σ_y ≥ |σ_z|`, with `σ_z < 0` when `det M < 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarFactors {
    pub r: Mat3,
    pub s: Mat3,
    pub u: Mat3,
    pub v: Mat3,
    pub sigma: Vec3,
}

/// Singular value decomposition by one-sided Jacobi rotations.
fn svd3(m: &Mat3) -> (Mat3, Vec3, Mat3) {
    let mut b = *m;
    let mut v = Mat3::IDENTITY;
    const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];
    for _sweep in 0..40 {
        let mut rotated = false;
        for &(p, q) in &PAIRS {
            let bp = b.col(p);
            let bq = b.col(q);
            let alpha = dot3(bp, bp);
            let beta = dot3(bq, bq);
            let gamma = dot3(bp, bq);
            if gamma == 0.0 || abs(gamma) <= 1e-16 * sqrt(alpha * beta) {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = if zeta >= 0.0 {
                1.0 / (zeta + sqrt(1.0 + zeta * zeta))
            } else {
                -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
            };
            let c = 1.0 / sqrt(1.0 + t * t);
            let s = c * t;
            for k in 0..3 {
                let (x, y) = (b.0[k][p], b.0[k][q]);
                b.0[k][p] = c * x - s * y;
                b.0[k][q] = s * x + c * y;
                let (x, y) = (v.0[k][p], v.0[k][q]);
                v.0[k][p] = c * x - s * y;
                v.0[k][q] = s * x + c * y;
            }
        }
        if !rotated {
            break;
        }
    }

    // Sort columns by descending norm.
    let norms = [norm3(b.col(0)), norm3(b.col(1)), norm3(b.col(2))];
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let bs = Mat3::from_cols(b.col(order[0]), b.col(order[1]), b.col(order[2]));
    let mut vs = Mat3::from_cols(v.col(order[0]), v.col(order[1]), v.col(order[2]));
    let mut bs = bs;
    if vs.det() < 0.0 {
        vs.set_col(2, scale3(vs.col(2), -1.0));
        bs.set_col(2, scale3(bs.col(2), -1.0));
    }

    let b0 = bs.col(0);
    let n0 = norm3(b0);
    if n0 == 0.0 {
        return (vs, [0.0; 3], vs);
    }
    let u0 = scale3(b0, 1.0 / n0);
    let b1 = bs.col(1);
    let b1p = sub3(b1, scale3(u0, dot3(u0, b1)));
    let n1 = norm3(b1p);
    let u1 = if n1 > 1e-15 * n0 {
        scale3(b1p, 1.0 / n1)
    } else {
        any_perpendicular(u0)
    };
    let u2 = cross3(u0, u1);
    let sigma = [n0, dot3(u1, b1), dot3(u2, bs.col(2))];
    (Mat3::from_cols(u0, u1, u2), sigma, vs)
}

fn any_perpendicular(u: Vec3) -> Vec3 {
    let axis = if abs(u[0]) <= abs(u[1]) && abs(u[0]) <= abs(u[2]) {
        [1.0, 0.0, 0.0]
    } else if abs(u[1]) <= abs(u[2]) {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let p = cross3(u, axis);
    scale3(p, 1.0 / norm3(p))
}

/// Polar decomposition `M = R·S` with `R ∈ SO(3)` and `S` symmetric.
///
/// Reflections are absorbed into the smallest singular value, so `S` is
/// indefinite when `det M < 0`. Rank-deficient inputs still produce a valid
/// rotation; the free directions follow the SVD ordering.
pub fn polar_decompose(m: &Mat3) -> PolarFactors {
    let (u, sigma, v) = svd3(m);
    let r = u * v.transpose();
    let s = v * Mat3::from_diag(sigma) * v.transpose();
    // Symmetrize away rounding.
    let s = (s + s.transpose()).scale(0.5);
    PolarFactors { r, s, u, v, sigma }
}

/// Closed-form derivative of the polar rotation with respect to its matrix
/// argument, `∂vec(R)/∂vec(M) = Σᵢ λᵢ qᵢ qᵢᵀ`.
#[derive(Clone, Copy, Debug)]
pub struct RotationGradient {
    pub h: Mat9,
    pub lambdas: Vec3,
    pub q: [Vec9; 3],
    /// Number of denominators that were clamped.
    pub clamped: u32,
}

pub fn rotation_gradient(f: &PolarFactors) -> RotationGradient {
    let [sx, sy, sz] = f.sigma;
    let eps = 1e-6 * sx.max(1.0);
    let mut clamped = 0;
    let mut lambda = |d: f64| {
        if d < eps {
            clamped += 1;
            2.0 / eps
        } else {
            2.0 / d
        }
    };
    let lambdas = [lambda(sx + sy), lambda(sy + sz), lambda(sx + sz)];
    let k = 1.0 / sqrt(2.0);
    let twists = [
        Mat3([[0.0, -k, 0.0], [k, 0.0, 0.0], [0.0, 0.0, 0.0]]),
        Mat3([[0.0, 0.0, 0.0], [0.0, 0.0, k], [0.0, -k, 0.0]]),
        Mat3([[0.0, 0.0, k], [0.0, 0.0, 0.0], [-k, 0.0, 0.0]]),
    ];
    let vt = f.v.transpose();
    let q = twists.map(|t| vec(&(f.u * t * vt)));
    let mut h = [[0.0; 9]; 9];
    for (l, qi) in lambdas.iter().zip(q.iter()) {
        for a in 0..9 {
            for b in 0..9 {
                h[a][b] += l * qi[a] * qi[b];
            }
        }
    }
    RotationGradient { h, lambdas, q, clamped }
}

#[cfg(test)]
mod tests {
    extern crate std;
    use super::*;
    use proptest::prelude::*;

    fn mat_strategy() -> impl Strategy<Value = Mat3> {
        proptest::array::uniform9(-2.0f64..2.0).prop_map(|v| Mat3::from_vec9(&v))
    }

    fn mat_product(a: &Mat3, b: &Mat3) -> Vec9 {
        // Oracle: explicit triple loop, independent of the expansion matrices.
        let mut out = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out[3 * i + j] += a.0[i][k] * b.0[k][j];
                }
            }
        }
        out
    }

    #[test]
    fn identity_expands_to_identity() {
        let h = hat_sym(&Mat3::IDENTITY);
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(h[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    proptest! {
        #[test]
        fn hat_identities(r in mat_strategy(), a in mat_strategy(), f in mat_strategy()) {
            let ra = mat_product(&r, &a);
            let via_a = mat9_mul_vec(&hat_sym(&a), &vec(&r));
            let via_r = mat9_mul_vec(&hat_r(&r), &vec(&a));
            let fa = mat_product(&f, &a);
            let via_f = mat9_mul_vec(&hat_f(&f), &vec(&a));
            let via_a2 = mat9_mul_vec(&hat_sym(&a), &vec(&f));
            for i in 0..9 {
                prop_assert!((ra[i] - via_a[i]).abs() < 1e-14);
                prop_assert!((ra[i] - via_r[i]).abs() < 1e-14);
                prop_assert!((fa[i] - via_f[i]).abs() < 1e-14);
                prop_assert!((fa[i] - via_a2[i]).abs() < 1e-14);
            }
        }

        #[test]
        fn actuation_is_symmetric_and_linear(b in proptest::array::uniform6(-1.0f64..1.0), c in proptest::array::uniform6(-1.0f64..1.0)) {
            let a = actuation_from_params(&ActuationParams(b));
            prop_assert_eq!(a, a.transpose());
            let mut sum = [0.0; 6];
            for i in 0..6 { sum[i] = b[i] + c[i]; }
            let lhs = actuation_from_params(&ActuationParams(sum)) - Mat3::IDENTITY;
            let rhs = (a - Mat3::IDENTITY) + (actuation_from_params(&ActuationParams(c)) - Mat3::IDENTITY);
            prop_assert!((lhs - rhs).frobenius() < 1e-14);
            let back = ActuationParams::from_matrix(&a).0;
            for i in 0..6 {
                prop_assert!((back[i] - b[i]).abs() < 1e-15);
            }
        }

        #[test]
        fn polar_reconstructs(m in mat_strategy()) {
            prop_assume!(m.det() > 0.1);
            let p = polar_decompose(&m);
            prop_assert!((p.r * p.s - m).frobenius() / m.frobenius() < 1e-8);
            prop_assert!((p.r.transpose() * p.r - Mat3::IDENTITY).frobenius() < 1e-10);
            prop_assert!((p.r.det() - 1.0).abs() < 1e-10);
            prop_assert!((p.s - p.s.transpose()).frobenius() < 1e-10);
            let usv = p.u * Mat3::from_diag(p.sigma) * p.v.transpose();
            prop_assert!((usv - m).frobenius() / m.frobenius() < 1e-8);
            prop_assert!(p.sigma[0] >= p.sigma[1] && p.sigma[1] >= p.sigma[2].abs());
        }

        #[test]
        fn rotation_gradient_is_symmetric(m in mat_strategy()) {
            let g = rotation_gradient(&polar_decompose(&m));
            for i in 0..9 { for j in 0..9 {
                prop_assert!((g.h[i][j] - g.h[j][i]).abs() <= 1e-12 * (1.0 + g.h[i][j].abs()));
            }}
        }
    }

    #[test]
    fn actuation_layout() {
        let a = actuation_from_params(&ActuationParams([0.1, 0.0, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(a, Mat3::from_diag([1.1, 1.0, 1.0]));
        let a = actuation_from_params(&ActuationParams([0.0, 0.2, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(a.0[0][1], 0.2);
        assert_eq!(a.0[1][0], 0.2);
        assert_eq!(actuation_from_params(&ActuationParams::IDENTITY), Mat3::IDENTITY);
    }

    #[test]
    fn jacobian_matches_layout() {
        for k in 0..6 {
            let mut b = [0.0; 6];
            b[k] = 1.0;
            let a = vec(&(actuation_from_params(&ActuationParams(b)) - Mat3::IDENTITY));
            for i in 0..9 {
                assert_eq!(a[i], ACTUATION_JACOBIAN[i][k]);
            }
        }
    }

    #[test]
    fn polar_of_simple_matrices() {
        let p = polar_decompose(&Mat3::IDENTITY);
        assert!((p.r - Mat3::IDENTITY).frobenius() < 1e-15);
        assert!((p.s - Mat3::IDENTITY).frobenius() < 1e-15);
        let d = Mat3::from_diag([2.0, 1.0, 1.0]);
        let p = polar_decompose(&d);
        assert!((p.r - Mat3::IDENTITY).frobenius() < 1e-14);
        assert!((p.s - d).frobenius() < 1e-14);
        let rz = Mat3::rot_z(0.3);
        let p = polar_decompose(&rz);
        assert!((p.r - rz).frobenius() < 1e-14);
        assert!((p.s - Mat3::IDENTITY).frobenius() < 1e-14);
    }

    #[test]
    fn polar_handles_reflection_and_rank_deficiency() {
        let m = Mat3::from_diag([2.0, 1.0, -0.5]);
        let p = polar_decompose(&m);
        assert!((p.r.det() - 1.0).abs() < 1e-14);
        assert!((p.r * p.s - m).frobenius() < 1e-13);
        assert!(p.sigma[2] < 0.0);

        let m = Mat3([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 0.0]]);
        let p = polar_decompose(&m);
        assert!((p.r.transpose() * p.r - Mat3::IDENTITY).frobenius() < 1e-12);
        assert!((p.r.det() - 1.0).abs() < 1e-12);
        assert!((p.r * p.s - m).frobenius() < 1e-12);

        let p = polar_decompose(&Mat3::ZERO);
        assert_eq!(p.r, Mat3::IDENTITY);
    }

    #[test]
    fn rotation_gradient_at_identity() {
        let g = rotation_gradient(&polar_decompose(&Mat3::IDENTITY));
        assert_eq!(g.lambdas, [1.0, 1.0, 1.0]);
        assert_eq!(g.clamped, 0);
    }

    #[test]
    fn rotation_gradient_clamps_degenerate_pairs() {
        let g = rotation_gradient(&polar_decompose(&Mat3::from_diag([1.0, 1e-9, -1e-9])));
        assert_eq!(g.clamped, 1);
        assert!(g.lambdas.iter().all(|l| l.is_finite() && *l > 0.0));
    }
}
