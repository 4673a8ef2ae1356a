use proptest::prelude::*;
use shapeact_core::energy::{sample_gradient, sample_hessian_b, sample_hessian_u, Domain, SampleActuation};
use shapeact_core::geometry::{build_samples, HexMesh, NodeTag, ShapeGradients, CORNERS};
use shapeact_core::kernels::{actuation_from_params, polar_decompose, rotation_gradient, vec, ActuationParams};
use shapeact_core::solver::{PdSolver, SolverConfig, DESCENT_SLACK};
use shapeact_core::Mat3;

fn frob(rows: impl Iterator<Item = f64>) -> f64 {
    rows.map(|x| x * x).sum::<f64>().sqrt()
}

fn well_conditioned() -> impl Strategy<Value = Mat3> {
    proptest::array::uniform9(-0.4f64..0.4).prop_map(|v| {
        let mut m = Mat3::from_vec9(&v);
        for i in 0..3 {
            m.0[i][i] += 1.0;
        }
        m
    })
}

fn rotation_fd(m: &Mat3, eps: f64) -> [[f64; 9]; 9] {
    let mut h = [[0.0; 9]; 9];
    for j in 0..9 {
        let mut p = *m;
        p.0[j / 3][j % 3] += eps;
        let rp = vec(&polar_decompose(&p).r);
        p.0[j / 3][j % 3] -= 2.0 * eps;
        let rm = vec(&polar_decompose(&p).r);
        for i in 0..9 {
            h[i][j] = (rp[i] - rm[i]) / (2.0 * eps);
        }
    }
    h
}

fn element_state(xi: [f64; 3], disp: &[f64; 24], h: f64) -> (ShapeGradients, [f64; 24]) {
    let g = ShapeGradients::at(xi, h);
    let mut u = [0.0; 24];
    for (c, off) in CORNERS.iter().enumerate() {
        for d in 0..3 {
            u[3 * c + d] = off[d] as f64 * h + disp[3 * c + d];
        }
    }
    (g, u)
}

fn grad_at(g: &ShapeGradients, u: &[f64; 24], a: &Mat3) -> [f64; 24] {
    let r = polar_decompose(&(g.deformation_gradient(u) * *a)).r;
    sample_gradient(g, u, a, &r)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotation_gradient_matches_finite_differences(m in well_conditioned()) {
        let h = rotation_gradient(&polar_decompose(&m)).h;
        let fd = rotation_fd(&m, 1e-6);
        let err = frob((0..81).map(|k| h[k / 9][k % 9] - fd[k / 9][k % 9]));
        let norm = frob((0..81).map(|k| fd[k / 9][k % 9]));
        prop_assert!(err / norm < 1e-4, "relative error {}", err / norm);
    }

    #[test]
    fn element_hessians_match_finite_differences(
        xi in proptest::array::uniform3(0.05f64..0.95),
        disp in proptest::array::uniform24(-0.08f64..0.08),
        b in proptest::array::uniform6(-0.2f64..0.2),
    ) {
        let (g, u) = element_state(xi, &disp, 0.5);
        let a = actuation_from_params(&ActuationParams(b));
        let f = g.deformation_gradient(&u);
        let (hu, _) = sample_hessian_u(&g, &a, &polar_decompose(&(f * a)));
        let (hb, _) = sample_hessian_b(&g, &u, &a);
        let eps = 1e-6;
        let (mut eu, mut nu) = (0.0, 0.0);
        for j in 0..24 {
            let (mut up, mut um) = (u, u);
            up[j] += eps;
            um[j] -= eps;
            let (gp, gm) = (grad_at(&g, &up, &a), grad_at(&g, &um, &a));
            for i in 0..24 {
                let fd = (gp[i] - gm[i]) / (2.0 * eps);
                eu += (hu[i][j] - fd) * (hu[i][j] - fd);
                nu += fd * fd;
            }
        }
        let (mut eb, mut nb) = (0.0, 0.0);
        for k in 0..6 {
            let (mut bp, mut bm) = (b, b);
            bp[k] += eps;
            bm[k] -= eps;
            let gp = grad_at(&g, &u, &actuation_from_params(&ActuationParams(bp)));
            let gm = grad_at(&g, &u, &actuation_from_params(&ActuationParams(bm)));
            for i in 0..24 {
                let fd = (gp[i] - gm[i]) / (2.0 * eps);
                eb += (hb[i][k] - fd) * (hb[i][k] - fd);
                nb += fd * fd;
            }
        }
        prop_assert!((eu / nu).sqrt() < 1e-4, "displacement Hessian {}", (eu / nu).sqrt());
        prop_assert!((eb / nb).sqrt() < 1e-4, "actuation Hessian {}", (eb / nb).sqrt());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn projective_iterations_never_increase_energy(
        n in prop_oneof![Just(1usize), Just(8)],
        b in proptest::collection::vec(proptest::array::uniform6(-0.25f64..0.25), 8 * 4),
        pull in -0.1f64..0.1,
    ) {
        let mut mesh = HexMesh::grid([2, 1, 1], 0.5);
        mesh.tag_nodes_in_box([0.0; 3], [0.0, 0.5, 0.5], NodeTag::Fixed);
        let samples = build_samples(&mesh, n).unwrap();
        let d = Domain::new(mesh, samples);
        let params = (0..d.samples.len()).map(|s| ActuationParams(b[s % b.len()])).collect();
        let mut act = SampleActuation::new(params).unwrap();
        let solver = PdSolver::prefactor(&d).unwrap();
        let mut ud = d.partition.gather_dirichlet(&d.mesh.rest_positions());
        ud[2] += pull;
        let (_, report) = solver.solve(&d, &mut act, &ud, None, &SolverConfig::default()).unwrap();
        for w in report.energy_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + DESCENT_SLACK, "{:?}", report.energy_trace);
        }
    }
}
