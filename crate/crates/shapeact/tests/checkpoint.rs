use shapeact::checkpoint::Checkpoint;
use shapeact_core::field::{EncoderConfig, FieldConfig, JawConfig, LatentSource, ShapeField};
use shapeact_core::synthetic::recovery_bar;
use shapeact_core::training::{actuation_targets, pretrain, Adam, EpochMetrics, Scene, Stage, StageConfig, TrainConfig, TrainingFrame};

fn setup() -> (ShapeField, Scene, Vec<TrainingFrame>, TrainConfig) {
    let syn = recovery_bar(2, 1).unwrap();
    let scene = Scene::new(syn.mesh.clone(), syn.surface.clone(), 1).unwrap();
    let frames = syn
        .targets
        .iter()
        .enumerate()
        .map(|(i, t)| TrainingFrame { target: t.clone(), source: LatentSource::Frame(i) })
        .collect();
    let (lo, hi) = syn.mesh.bounding_box();
    let mut fc = FieldConfig::new(EncoderConfig::AutoDecoder { frames: 2 }, lo, hi);
    fc.width = 8;
    fc.latent_dim = 4;
    fc.modulation_hidden = 6;
    fc.jaw = Some(JawConfig { hidden: 4, pivot: [0.0; 3] });
    let field = ShapeField::new(fc, 5).unwrap();
    let cfg = TrainConfig { stage1: StageConfig { epochs: 3, batch: 1, lr: 1e-3 }, ..TrainConfig::default() };
    (field, scene, frames, cfg)
}

#[test]
fn save_load_is_bit_exact() {
    let (mut field, _, _, cfg) = setup();
    for (k, x) in field.params_mut().data_mut(0).iter_mut().enumerate() {
        *x = f64::from_bits(x.to_bits() ^ (k as u64 & 7)) + 1e-300;
    }
    let mut adam = Adam::new(field.params(), cfg.adam);
    adam.step = 7;
    adam.m.data_mut(1)[0] = 0.1;
    adam.v.data_mut(2)[0] = 5e-324;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt");
    let ckpt = Checkpoint { stage: Stage::Pretrain, epoch: 4, aborted: false, train: cfg.clone(), field, adam: Some(adam) };
    ckpt.save(&path).unwrap();
    // Saving again over an existing checkpoint replaces it.
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.field.config(), ckpt.field.config());
    let bits = |f: &ShapeField| f.params().flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.field), bits(&ckpt.field));
    assert_eq!(back.adam, ckpt.adam);
    assert_eq!(back.train, cfg);
    assert_eq!(back.epoch, 4);
}

#[test]
fn resuming_from_a_checkpoint_continues_identically() {
    let (field0, scene, frames, cfg) = setup();
    let scenes = vec![scene];
    let targets =
        vec![frames.iter().map(|f| actuation_targets(&scenes[0], &f.target, &cfg.solver).unwrap().0).collect::<Vec<_>>()];

    let mut straight = field0.clone();
    let mut adam = Adam::new(straight.params(), cfg.adam);
    let full = pretrain(&mut straight, &mut adam, &scenes, &frames, &targets, &cfg, 0, &mut |_, _, _| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stage1");
    let mut part = field0.clone();
    let mut adam = Adam::new(part.params(), cfg.adam);
    let one = StageConfig { epochs: 3, ..cfg.stage1 };
    let mut stop_after_first = |m: &EpochMetrics, f: &ShapeField, a: &Adam| {
        if m.epoch == 0 {
            let c = Checkpoint { stage: Stage::Pretrain, epoch: 0, aborted: false, train: cfg.clone(), field: f.clone(), adam: Some(a.clone()) };
            c.save(&path).unwrap();
            return Err(shapeact_core::Error::Aborted("interrupted".into()));
        }
        Ok(())
    };
    let cfg_one = TrainConfig { stage1: one, ..cfg.clone() };
    assert!(pretrain(&mut part, &mut adam, &scenes, &frames, &targets, &cfg_one, 0, &mut stop_after_first).is_err());

    let ckpt = Checkpoint::load(&path).unwrap();
    let mut resumed = ckpt.field;
    let mut adam = ckpt.adam.unwrap();
    let rest = pretrain(&mut resumed, &mut adam, &scenes, &frames, &targets, &cfg, 1, &mut |_, _, _| Ok(())).unwrap();
    assert_eq!(rest[0].loss.to_bits(), full[1].loss.to_bits());
    assert_eq!(resumed.params(), straight.params());
}
