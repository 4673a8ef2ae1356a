use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapeact_core::field::{EncoderConfig, FieldConfig, JawConfig, LatentSource, ResolutionConfig, ShapeField};
use shapeact_core::geometry::{HexMesh, NodeTag, SurfaceMesh};
use shapeact_core::solver::SolverConfig;
use shapeact_core::training::{
    backpropagate, fit_new_pose, frame_loss, simulate, LossConfig, PositionPenalty, Scene, TargetPose, TrainConfig,
};

fn one_element_scene(jaw: bool) -> Scene {
    let mut mesh = HexMesh::grid([1, 1, 1], 1.0);
    mesh.tag_nodes_in_box([0.0; 3], [0.0, 1.0, 1.0], NodeTag::Fixed);
    if jaw {
        mesh.tag_nodes_in_box([1.0, 0.0, 0.0], [1.0, 0.0, 1.0], NodeTag::Jaw);
    }
    let surface = SurfaceMesh::box_surface([0.0; 3], [1.0; 3], [2, 2, 2]);
    Scene::new(mesh, surface, 8).unwrap()
}

fn tiny_field(jaw: bool, seed: u64) -> ShapeField {
    let mut cfg = FieldConfig::new(EncoderConfig::Descriptor { dim: 2, hidden: 4 }, [0.0; 3], [1.0; 3]);
    cfg.width = 8;
    cfg.latent_dim = 3;
    cfg.modulation_hidden = 5;
    cfg.resolution = Some(ResolutionConfig { hidden: 4, reference_count: 8.0 });
    if jaw {
        cfg.jaw = Some(JawConfig { hidden: 4, pivot: [0.0, 0.0, 0.5] });
    }
    let mut field = ShapeField::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..field.params().len() {
        let name = field.params().tensor(t).name.clone();
        let scale = if name.starts_with("act.out") || name.starts_with("jaw.fc2") {
            0.05
        } else if name.starts_with("act.l") {
            0.0
        } else {
            0.3
        };
        for x in field.params_mut().data_mut(t) {
            *x += scale * rng.random_range(-1.0..1.0);
        }
    }
    field
}

fn target(scene: &Scene) -> TargetPose {
    let pos: Vec<_> = scene
        .surface
        .vertices
        .iter()
        .map(|v| [v[0] * 1.05 + 0.02 * v[1], v[1] - 0.03 * v[0] * v[2], v[2] + 0.04 * v[0]])
        .collect();
    TargetPose::new(pos, &scene.surface.faces, vec![0.3, -0.2]).unwrap()
}

fn loss_of(field: &ShapeField, scene: &Scene, target: &TargetPose, cfg: &LossConfig) -> f64 {
    let z = field.encode(LatentSource::Descriptor(target.descriptor.clone())).unwrap();
    let sim = simulate(field, scene, &z.z, None, &SolverConfig::tight()).unwrap();
    frame_loss(scene, &sim.state.u, target, cfg).unwrap().0.total
}

fn check(jaw: bool) {
    let scene = one_element_scene(jaw);
    let mut field = tiny_field(jaw, 3);
    let target = target(&scene);
    let cfg = LossConfig { alpha: 1.0, penalty: PositionPenalty::SquaredL2 };
    let z = field.encode(LatentSource::Descriptor(target.descriptor.clone())).unwrap();
    let sim = simulate(&field, &scene, &z.z, None, &SolverConfig::tight()).unwrap();
    let mut grads = field.zero_grads();
    let (_, dz) = backpropagate(&field, &scene, &sim, &target, &cfg, true, &mut grads).unwrap();
    field.backward_encode(&z, &dz, &mut grads).unwrap();
    let analytic = grads.flatten();
    let scale = analytic.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..analytic.len() {
        let (t, off) = field.params().locate(i).unwrap();
        let x0 = field.params().data(t)[off];
        field.params_mut().data_mut(t)[off] = x0 + eps;
        let lp = loss_of(&field, &scene, &target, &cfg);
        field.params_mut().data_mut(t)[off] = x0 - eps;
        let lm = loss_of(&field, &scene, &target, &cfg);
        field.params_mut().data_mut(t)[off] = x0;
        let fd = (lp - lm) / (2.0 * eps);
        let err = (analytic[i] - fd).abs() / fd.abs().max(1e-3 * scale);
        worst = worst.max(err);
        assert!(err < 1e-3, "{}[{off}]: analytic {} fd {fd}", field.params().tensor(t).name, analytic[i]);
    }
    println!("worst relative error {worst:e} over {} parameters", analytic.len());
}

#[test]
fn network_gradient_through_solver_matches_finite_differences() {
    check(false);
}

#[test]
fn jaw_network_gradient_through_dirichlet_matches_finite_differences() {
    check(true);
}

#[test]
fn fitting_with_zero_iterations_returns_the_initial_code() {
    let scene = one_element_scene(false);
    let field = tiny_field(false, 1);
    let t = target(&scene);
    let z0 = field.encode(LatentSource::Descriptor(t.descriptor.clone())).unwrap().z;
    let fit = fit_new_pose(&field, &scene, &t, &z0, 0, &TrainConfig::default()).unwrap();
    assert_eq!(fit.z, z0);
    assert_eq!(fit.losses.len(), 1);
}

#[test]
fn fitting_does_not_blow_up_the_loss() {
    let scene = one_element_scene(false);
    let field = tiny_field(false, 2);
    let t = target(&scene);
    let z0 = field.encode(LatentSource::Descriptor(t.descriptor.clone())).unwrap().z;
    let fit = fit_new_pose(&field, &scene, &t, &z0, 10, &TrainConfig::default()).unwrap();
    for w in fit.losses.windows(2) {
        assert!(w[1] <= 1.5 * w[0], "{:?}", fit.losses);
    }
    assert!(fit.losses.last().unwrap() <= &fit.losses[0]);
}
