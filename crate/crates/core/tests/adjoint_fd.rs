use shapeact_core::adjoint::{grad_actuation, grad_dirichlet, Sensitivity};
use shapeact_core::energy::{Domain, SampleActuation};
use shapeact_core::geometry::{build_samples, HexMesh, NodeTag};
use shapeact_core::kernels::ActuationParams;
use shapeact_core::solver::{PdSolver, SolverConfig};

fn loss(u: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let l = u.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
    let g = u.iter().zip(target).map(|(a, b)| 2.0 * (a - b)).collect();
    (l, g)
}

fn rel_err(a: f64, f: f64, scale: f64) -> f64 {
    (a - f).abs() / f.abs().max(1e-3 * scale)
}

#[test]
fn actuation_and_dirichlet_gradients_match_finite_differences() {
    for n in [1usize, 8] {
        let mut mesh = HexMesh::grid([2, 1, 1], 0.5);
        mesh.tag_nodes_in_box([0.0; 3], [0.0, 1.0, 1.0], NodeTag::Fixed);
        let samples = build_samples(&mesh, n).unwrap();
        let d = Domain::new(mesh, samples);
        let ns = d.samples.len();
        let params: Vec<ActuationParams> = (0..ns)
            .map(|s| {
                let t = s as f64;
                ActuationParams([0.1 + 0.02 * t, 0.03, -0.02 * t.sin(), -0.05, 0.04 * t.cos(), 0.08])
            })
            .collect();
        let solver = PdSolver::prefactor(&d).unwrap();
        let rest = d.mesh.rest_positions();
        let mut ud = d.partition.gather_dirichlet(&rest);
        ud[1] += 0.02;
        let target: Vec<f64> = rest.iter().enumerate().map(|(i, x)| x * 1.05 + 0.01 * (i as f64).sin()).collect();
        let cfg = SolverConfig::tight();
        let solve = |p: &[ActuationParams], ud: &[f64]| {
            let mut act = SampleActuation::new(p.to_vec()).unwrap();
            let (st, _) = solver.solve(&d, &mut act, ud, None, &cfg).unwrap();
            (act, st.u)
        };
        let (act, u) = solve(&params, &ud);
        let (_, g) = loss(&u, &target);
        let sens = Sensitivity::prepare(&d, &act, &u).unwrap();
        let gc = d.partition.gather_free(&g);
        let lambda = sens.adjoint(&gc).unwrap();
        let gb = grad_actuation(&d, &act, &u, &lambda);
        let mut gd = grad_dirichlet(&d, &sens.system, &lambda);
        for (x, y) in gd.iter_mut().zip(d.partition.gather_dirichlet(&g)) {
            *x += y;
        }
        let eps = 1e-5;
        let scale = gb.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        for s in [0, ns - 1] {
            for k in 0..6 {
                let mut p = params.clone();
                p[s].0[k] += eps;
                let lp = loss(&solve(&p, &ud).1, &target).0;
                p[s].0[k] -= 2.0 * eps;
                let lm = loss(&solve(&p, &ud).1, &target).0;
                let fd = (lp - lm) / (2.0 * eps);
                let e = rel_err(gb[s][k], fd, scale);
                println!("n={n} s={s} k={k} adj={:e} fd={fd:e} err={e:e}", gb[s][k]);
                assert!(e < 1e-3);
            }
        }
        let scale = gd.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in [0, 1, 5] {
            let mut p = ud.clone();
            p[i] += eps;
            let lp = loss(&solve(&params, &p).1, &target).0;
            p[i] -= 2.0 * eps;
            let lm = loss(&solve(&params, &p).1, &target).0;
            let fd = (lp - lm) / (2.0 * eps);
            let e = rel_err(gd[i], fd, scale);
            println!("n={n} dirichlet {i} adj={:e} fd={fd:e} err={e:e}", gd[i]);
            assert!(e < 1e-3);
        }
    }
}
