use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapeact_core::field::{EncoderConfig, FieldConfig, JawConfig, LatentSource, ResolutionConfig, ShapeField};
use shapeact_core::Vec3;

fn tiny_field(encoder: EncoderConfig, seed: u64) -> ShapeField {
    let mut cfg = FieldConfig::new(encoder, [0.0; 3], [3.0, 1.0, 1.0]);
    cfg.width = 8;
    cfg.latent_dim = 5;
    cfg.modulation_hidden = 7;
    cfg.resolution = Some(ResolutionConfig { hidden: 6, reference_count: 100.0 });
    cfg.jaw = Some(JawConfig { hidden: 6, pivot: [0.0, 0.5, 0.5] });
    let mut field = ShapeField::new(cfg, seed).unwrap();
    // Zero-initialized layers would hide whole gradient paths.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for t in 0..field.params().len() {
        let name = field.params().tensor(t).name.clone();
        let scale = if name.starts_with("act.l") { 0.0 } else { 0.3 };
        for x in field.params_mut().data_mut(t) {
            *x += scale * rng.random_range(-1.0..1.0);
        }
    }
    field
}

fn points(n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.random_range(0.0..3.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect()
}

struct Probe {
    weights: Vec<[f64; 6]>,
    jaw_weights: [f64; 5],
}

impl Probe {
    fn value(&self, field: &ShapeField, source: &LatentSource, pts: &[Vec3], res: Option<f64>) -> f64 {
        let z = field.encode(source.clone()).unwrap();
        let ctx = field.shape(&z.z, res).unwrap();
        let b = field.eval_actuation(&ctx, pts).unwrap();
        let mut l = 0.0;
        for (bp, w) in b.iter().zip(self.weights.iter()) {
            for k in 0..6 {
                l += w[k] * bp.0[k] * bp.0[k];
            }
        }
        let th = ctx.jaw_params().unwrap().0;
        l + th.iter().zip(self.jaw_weights.iter()).map(|(a, b)| a * b + 0.5 * a * a).sum::<f64>()
    }

    fn gradient(&self, field: &ShapeField, source: &LatentSource, pts: &[Vec3], res: Option<f64>) -> Vec<f64> {
        let z = field.encode(source.clone()).unwrap();
        let ctx = field.shape(&z.z, res).unwrap();
        let batch = field.forward_actuation(&ctx, pts).unwrap();
        let gb: Vec<[f64; 6]> = batch
            .params
            .iter()
            .zip(self.weights.iter())
            .map(|(b, w)| core::array::from_fn(|k| 2.0 * w[k] * b.0[k]))
            .collect();
        let th = ctx.jaw_params().unwrap().0;
        let gj: [f64; 5] = core::array::from_fn(|k| self.jaw_weights[k] + th[k]);
        let mut grads = field.zero_grads();
        let dz = field.backward(&ctx, Some((&batch, &gb)), Some(&gj), &mut grads).unwrap();
        field.backward_encode(&z, &dz, &mut grads).unwrap();
        grads.flatten()
    }
}

fn check_all_parameters(field: &mut ShapeField, source: LatentSource, res: Option<f64>) {
    let pts = points(16, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let probe = Probe {
        weights: (0..pts.len()).map(|_| core::array::from_fn(|_| rng.random_range(0.5..1.5))).collect(),
        jaw_weights: core::array::from_fn(|_| rng.random_range(-1.0..1.0)),
    };
    let analytic = probe.gradient(field, &source, &pts, res);
    let scale = analytic.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(scale > 0.0);
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..analytic.len() {
        let (t, off) = field.params().locate(i).unwrap();
        let x0 = field.params().data(t)[off];
        field.params_mut().data_mut(t)[off] = x0 + eps;
        let lp = probe.value(field, &source, &pts, res);
        field.params_mut().data_mut(t)[off] = x0 - eps;
        let lm = probe.value(field, &source, &pts, res);
        field.params_mut().data_mut(t)[off] = x0;
        let fd = (lp - lm) / (2.0 * eps);
        let err = (analytic[i] - fd).abs() / fd.abs().max(1e-3 * scale);
        if err > worst {
            worst = err;
        }
        assert!(err < 1e-4, "{} [{off}]: analytic {} vs fd {fd}", field.params().tensor(t).name, analytic[i]);
    }
    println!("worst relative error {worst:e} over {} parameters", analytic.len());
}

#[test]
fn descriptor_field_gradients_match_finite_differences() {
    let mut field = tiny_field(EncoderConfig::Descriptor { dim: 3, hidden: 4 }, 1);
    check_all_parameters(&mut field, LatentSource::Descriptor(vec![0.4, -0.7, 1.1]), Some(160.0));
}

#[test]
fn auto_decoder_gradients_match_finite_differences() {
    let mut field = tiny_field(EncoderConfig::AutoDecoder { frames: 3 }, 2);
    check_all_parameters(&mut field, LatentSource::Frame(1), None);
}

#[test]
fn latent_gradient_is_sum_of_point_contributions() {
    let field = tiny_field(EncoderConfig::AutoDecoder { frames: 1 }, 5);
    let z = field.encode(LatentSource::Frame(0)).unwrap();
    let ctx = field.shape(&z.z, Some(50.0)).unwrap();
    let pts = points(10, 3);
    let batch = field.forward_actuation(&ctx, &pts).unwrap();
    let gb: Vec<[f64; 6]> = (0..pts.len()).map(|i| core::array::from_fn(|k| (i + k) as f64 * 0.1 - 0.3)).collect();
    let mut g = field.zero_grads();
    let total = field.backward(&ctx, Some((&batch, &gb)), None, &mut g).unwrap();
    let mut sum = vec![0.0; total.len()];
    for i in 0..pts.len() {
        let single = field.forward_actuation(&ctx, &pts[i..i + 1]).unwrap();
        let mut g = field.zero_grads();
        let dz = field.backward(&ctx, Some((&single, &gb[i..i + 1])), None, &mut g).unwrap();
        sum.iter_mut().zip(dz.iter()).for_each(|(a, b)| *a += b);
    }
    for (a, b) in total.iter().zip(sum.iter()) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
}

#[test]
fn zero_incoming_gradient_gives_zero_parameter_gradient() {
    let field = tiny_field(EncoderConfig::Descriptor { dim: 3, hidden: 4 }, 6);
    let z = field.encode(LatentSource::Descriptor(vec![0.1, 0.2, 0.3])).unwrap();
    let ctx = field.shape(&z.z, Some(20.0)).unwrap();
    let pts = points(5, 1);
    let batch = field.forward_actuation(&ctx, &pts).unwrap();
    let mut g = field.zero_grads();
    let dz = field.backward(&ctx, Some((&batch, &[[0.0; 6]; 5])), Some(&[0.0; 5]), &mut g).unwrap();
    field.backward_encode(&z, &dz, &mut g).unwrap();
    assert_eq!(g.max_abs(), 0.0);
}

#[test]
fn batched_evaluation_matches_single_points() {
    let field = tiny_field(EncoderConfig::AutoDecoder { frames: 1 }, 7);
    let ctx = field.shape(&[0.2, -0.1, 0.3, 0.0, 0.5], None).unwrap();
    let mut pts = points(300, 2);
    pts.push(pts[17]);
    let all = field.eval_actuation(&ctx, &pts).unwrap();
    assert_eq!(all[17], all[300]);
    for (i, p) in pts.iter().enumerate().step_by(37) {
        assert_eq!(field.eval_actuation(&ctx, &[*p]).unwrap()[0], all[i]);
    }
}

#[test]
fn unit_modulation_reproduces_unmodulated_network_bitwise() {
    let mut field = tiny_field(EncoderConfig::AutoDecoder { frames: 1 }, 8);
    let t = field.params().id("act.out.weight").unwrap();
    for (i, x) in field.params_mut().data_mut(t).iter_mut().enumerate() {
        *x = (i as f64 * 0.37).sin();
    }
    let last = field.params().names().iter().filter(|n| n.starts_with("mod.fc")).count() / 2 - 1;
    for suffix in ["weight", "bias"] {
        let id = field.params().id(&format!("mod.fc{last}.{suffix}")).unwrap();
        field.params_mut().data_mut(id).iter_mut().for_each(|x| *x = 0.0);
    }
    let ctx = field.shape(&[0.3, 0.1, -0.2, 0.4, 0.0], None).unwrap();
    assert!(ctx.modulations().iter().flatten().all(|&a| a == 1.0));
    let pts = points(64, 11);
    let modulated = field.eval_actuation(&ctx, &pts).unwrap();
    let plain = field.eval_actuation_unmodulated(&pts).unwrap();
    assert!(modulated.iter().any(|b| b.0.iter().any(|&x| x != 0.0)));
    for (a, b) in modulated.iter().zip(plain.iter()) {
        for k in 0..6 {
            assert_eq!(a.0[k].to_bits(), b.0[k].to_bits());
        }
    }
}
