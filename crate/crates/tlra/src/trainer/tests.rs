use super::*;
use crate::data::{apply_mask, synth_generate, Modality, SynthConfig};
use crate::numeric::{l2_normalize, Tape};
use crate::prototypes::{Polarity, PrototypeBank};

fn small_cfg() -> TrainerConfig {
    TrainerConfig {
        epochs: 4,
        batch_size: 4,
        d: 8,
        k_templates: 4,
        seed: 0,
        ..TrainerConfig::default()
    }
}

fn small_bundle(seed: u64) -> crate::data::FeatureBundle {
    synth_generate(&SynthConfig {
        n_train: 24,
        n_valid: 8,
        n_test: 8,
        dims: [5, 4, 6],
        seq_lens: [3, 2, 4],
        noise: [0.3; 3],
        signal: [1.0, 0.35, 0.35],
        seed,
    })
    .unwrap()
}

#[test]
fn stage_boundaries() {
    let cfg = TrainerConfig { epochs: 100, stage_switch_epoch: Some(50), ..TrainerConfig::default() };
    assert_eq!(stage_of_epoch(0, &cfg).unwrap(), Stage::One);
    assert_eq!(stage_of_epoch(49, &cfg).unwrap(), Stage::One);
    assert_eq!(stage_of_epoch(50, &cfg).unwrap(), Stage::Two);
    assert_eq!(stage_of_epoch(99, &cfg).unwrap(), Stage::Two);
    assert!(stage_of_epoch(100, &cfg).is_err());
    // default switch is epochs/2
    let cfg = TrainerConfig { epochs: 100, ..TrainerConfig::default() };
    assert_eq!(cfg.stage_switch(), 50);
}

#[test]
fn config_validation_rejects_bad_values() {
    let mut cfg = TrainerConfig::default();
    cfg.batch_size = 0;
    assert!(cfg.validate().is_err());
    let mut cfg = TrainerConfig::default();
    cfg.stage_switch_epoch = Some(0);
    assert!(cfg.validate().is_err());
    let mut cfg = TrainerConfig::default();
    cfg.stage_switch_epoch = Some(cfg.epochs + 1);
    assert!(cfg.validate().is_err());
    let mut cfg = TrainerConfig::default();
    cfg.loss_weights.lambda3 = -0.1;
    assert!(cfg.validate().is_err());
    let mut cfg = TrainerConfig::default();
    cfg.drop_prob = [1.0, 0.0, 0.0];
    assert!(cfg.validate().is_err());
}

#[test]
fn config_json_roundtrip_uses_snake_case() {
    let cfg: TrainerConfig = serde_json::from_str(
        r#"{"epochs":10,"batch_size":4,"learning_rate":0.001,"stage_switch_epoch":3,
            "loss_weights":{"lambda1":1.0,"lambda2":1.0,"lambda3":0.5,"lambda4":0.5,"lambda5":0.2,"delta":0.2},
            "eta":0.2,"k_templates":8,"d":16,"drop_prob":[0.1,0.2,0.3],
            "intra_variant":"literal","share_paths":true}"#,
    )
    .unwrap();
    assert_eq!(cfg.epochs, 10);
    assert_eq!(cfg.stage_switch(), 3);
    assert_eq!(cfg.intra_variant, crate::losses::IntraVariant::Literal);
    assert!(cfg.share_paths);
    assert!(serde_json::from_str::<TrainerConfig>(r#"{"no_such_field":1}"#).is_err());
}

#[test]
fn forward_full_pattern_stage1_no_suppression() {
    let cfg = small_cfg();
    let bundle = small_bundle(1);
    let model = Model::new(&cfg, bundle.dims).unwrap();
    let view = apply_mask(&bundle.records[0], crate::data::MissingPattern::full());
    let tape = Tape::new();
    let bound = model.params.bind(&tape);
    let fwd = forward(&tape, &bound, &model, &view, Stage::One, &cfg, ForwardMode::Train).unwrap();
    assert!(tape.scalar_value(fwd.y_hat).is_finite());
    assert!(!fwd.any_suppression());
    assert!(fwd.completed.is_empty());
    assert_eq!(fwd.q_observed.len(), 3);
}

#[test]
fn forward_single_modality_completes_two() {
    let cfg = small_cfg();
    let bundle = small_bundle(1);
    let model = Model::new(&cfg, bundle.dims).unwrap();
    let view = apply_mask(&bundle.records[0], crate::data::MissingPattern::single(Modality::L));
    let tape = Tape::new();
    let bound = model.params.bind(&tape);
    let fwd = forward(&tape, &bound, &model, &view, Stage::Two, &cfg, ForwardMode::Eval).unwrap();
    assert_eq!(fwd.completed.len(), 2);
    for c in &fwd.completed {
        assert_eq!(tape.shape_of(c.completed), vec![cfg.d]);
    }
}

#[test]
fn unanimous_votes_make_stages_agree() {
    let cfg = small_cfg();
    let bundle = small_bundle(2);
    let mut model = Model::new(&cfg, bundle.dims).unwrap();
    let rec = &bundle.records[0];
    let view = apply_mask(rec, crate::data::MissingPattern::full());

    // steer the bank so every modality votes P for this sample
    let tape = Tape::new();
    let bound = model.params.bind(&tape);
    let anchors: Vec<Vec<f64>> = Modality::ALL
        .iter()
        .map(|m| {
            let f = model.modal[m.index()].encode(&tape, &bound, tape.leaf(rec.features_of(*m).clone()));
            l2_normalize(tape.value(f).values()).unwrap()
        })
        .collect();
    let opposite: Vec<Vec<f64>> = anchors.iter().map(|a| {
        let mut o: Vec<f64> = a.iter().map(|v| -v).collect();
        o[0] += 0.01;
        l2_normalize(&o).unwrap()
    }).collect();
    model.bank = PrototypeBank::from_anchors(
        [
            [anchors[0].clone(), opposite[0].clone()],
            [anchors[1].clone(), opposite[1].clone()],
            [anchors[2].clone(), opposite[2].clone()],
        ],
        cfg.eta,
    );
    drop(tape);

    let run = |stage: Stage| -> (f64, Vec<Polarity>) {
        let tape = Tape::new();
        let bound = model.params.bind(&tape);
        let fwd = forward(&tape, &bound, &model, &view, stage, &cfg, ForwardMode::Eval).unwrap();
        (tape.scalar_value(fwd.y_hat), fwd.votes.iter().map(|(_, v)| *v).collect())
    };
    let (y1, votes1) = run(Stage::One);
    let (y2, votes2) = run(Stage::Two);
    assert!(votes1.iter().all(|v| *v == Polarity::Pos), "votes {votes1:?}");
    assert_eq!(votes1, votes2);
    assert_eq!(y1, y2, "suppression must be a no-op under unanimous votes");
}

#[test]
fn zero_lr_keeps_params_but_updates_bank() {
    let cfg = small_cfg();
    let bundle = small_bundle(3);
    let mut model = Model::new(&cfg, bundle.dims).unwrap();
    let before: Vec<Vec<f64>> = model.params.iter().map(|p| p.value.values().to_vec()).collect();
    let bank_before: Vec<f64> = model.bank.anchor(Modality::L, Polarity::Pos).to_vec();
    let mut opt = AdamW::new(&model.params, cfg.weight_decay);
    let batch: Vec<&crate::data::SampleRecord> = bundle.records[..4].iter().collect();
    let patterns = vec![crate::data::MissingPattern::full(); 4];
    train_step(&mut model, &mut opt, &batch, &patterns, Stage::One, 0.0, &cfg).unwrap();
    for (p, b) in model.params.iter().zip(&before) {
        assert_eq!(p.value.values(), b.as_slice(), "parameter {} changed at lr 0", p.name);
    }
    assert_ne!(model.bank.anchor(Modality::L, Polarity::Pos), bank_before.as_slice());
}

#[test]
fn zero_lr_and_zero_eta_freeze_everything() {
    let mut cfg = small_cfg();
    cfg.eta = 0.0;
    let bundle = small_bundle(3);
    let mut model = Model::new(&cfg, bundle.dims).unwrap();
    let before: Vec<Vec<f64>> = model.params.iter().map(|p| p.value.values().to_vec()).collect();
    let bank_before = model.bank.clone();
    let mut opt = AdamW::new(&model.params, cfg.weight_decay);
    let batch: Vec<&crate::data::SampleRecord> = bundle.records[..4].iter().collect();
    let patterns = vec![crate::data::MissingPattern::full(); 4];
    train_step(&mut model, &mut opt, &batch, &patterns, Stage::Two, 0.0, &cfg).unwrap();
    for (p, b) in model.params.iter().zip(&before) {
        assert_eq!(p.value.values(), b.as_slice());
    }
    for m in Modality::ALL {
        for c in Polarity::BOTH {
            assert_eq!(model.bank.anchor(m, c), bank_before.anchor(m, c));
        }
    }
}

#[test]
fn training_step_moves_templates() {
    // gradients must flow into the template library
    let cfg = small_cfg();
    let bundle = small_bundle(4);
    let mut model = Model::new(&cfg, bundle.dims).unwrap();
    let tmpl_before = model.params.get(model.templates.param).value.clone();
    let mut opt = AdamW::new(&model.params, cfg.weight_decay);
    let batch: Vec<&crate::data::SampleRecord> = bundle.records[..4].iter().collect();
    // masked samples so completion (and thus templates) participate
    let patterns = vec![crate::data::MissingPattern::single(Modality::L); 4];
    train_step(&mut model, &mut opt, &batch, &patterns, Stage::One, 1e-3, &cfg).unwrap();
    let tmpl_after = model.params.get(model.templates.param).value.clone();
    assert_ne!(tmpl_before.values(), tmpl_after.values());
}

#[test]
fn loss_curves_are_bit_reproducible() {
    let bundle = small_bundle(5);
    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let cfg = TrainerConfig { epochs: 5, ..small_cfg() };
    let a = run_training(&bundle, &cfg, dir1.path()).unwrap();
    let b = run_training(&bundle, &cfg, dir2.path()).unwrap();
    assert_eq!(a.history.len(), 5);
    for (ea, eb) in a.history.iter().zip(&b.history) {
        assert_eq!(ea.losses.total.to_bits(), eb.losses.total.to_bits());
        assert_eq!(ea.losses.align.to_bits(), eb.losses.align.to_bits());
        assert_eq!(ea.valid_acc.to_bits(), eb.valid_acc.to_bits());
    }
}

#[test]
fn one_epoch_produces_one_log_row_and_checkpoints() {
    let bundle = small_bundle(6);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainerConfig { epochs: 1, ..small_cfg() };
    let art = run_training(&bundle, &cfg, dir.path()).unwrap();
    let log = std::fs::read_to_string(&art.log_path).unwrap();
    let lines: Vec<&str> = log.trim().lines().collect();
    assert_eq!(lines[0], "epoch,align,intra,inter,task,total");
    assert_eq!(lines.len(), 2);
    assert!(art.best_checkpoint.exists());
    assert!(art.final_checkpoint.exists());
}

#[test]
fn snapshot_epochs_write_extra_checkpoints() {
    let bundle = small_bundle(6);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainerConfig { epochs: 3, snapshot_epochs: vec![1, 3], ..small_cfg() };
    let art = run_training(&bundle, &cfg, dir.path()).unwrap();
    assert_eq!(art.snapshots.len(), 2);
    assert!(art.snapshots.iter().all(|(_, p)| p.exists()));
}

#[test]
fn bank_stays_unit_norm_through_training() {
    let bundle = small_bundle(7);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainerConfig { epochs: 3, ..small_cfg() };
    let _ = run_training(&bundle, &cfg, dir.path()).unwrap();
    // reload the final model and check the bank
    let ckpt = load_checkpoint(&dir.path().join("checkpoint_final.json")).unwrap();
    assert!(ckpt.model.bank.max_norm_deviation() < 1e-9);
}

#[test]
fn checkpoint_roundtrip_preserves_predictions() {
    let bundle = small_bundle(8);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainerConfig { epochs: 2, ..small_cfg() };
    let art = run_training(&bundle, &cfg, dir.path()).unwrap();
    let ckpt = load_checkpoint(&art.final_checkpoint).unwrap();
    // predictions from the loaded model are finite & deterministic
    let rec = &bundle.records[0];
    let p1 = crate::harness::predict(&ckpt.model, &ckpt.config, rec, crate::data::MissingPattern::full()).unwrap();
    let p2 = crate::harness::predict(&ckpt.model, &ckpt.config, rec, crate::data::MissingPattern::full()).unwrap();
    assert_eq!(p1.to_bits(), p2.to_bits());
    // a second save must be byte-identical
    let p_a = dir.path().join("resave_a.json");
    save_checkpoint(&p_a, &ckpt.model, &ckpt.config, ckpt.epoch).unwrap();
    let ckpt2 = load_checkpoint(&p_a).unwrap();
    let p_b = dir.path().join("resave_b.json");
    save_checkpoint(&p_b, &ckpt2.model, &ckpt2.config, ckpt2.epoch).unwrap();
    assert_eq!(std::fs::read(&p_a).unwrap(), std::fs::read(&p_b).unwrap());
}

#[test]
fn baseline_ignores_alignment_machinery() {
    // with RLA and DLA disabled, predictions depend only on the modal
    // encoders and fusion head
    let cfg = small_cfg().ablation_baseline();
    let bundle = small_bundle(9);
    let mut model = Model::new(&cfg, bundle.dims).unwrap();
    let rec = &bundle.records[0];
    let before = crate::harness::predict(&model, &cfg, rec, crate::data::MissingPattern::full()).unwrap();
    // scribble over templates and query-path parameters
    let tmpl = model.templates.param;
    for v in model.params.get_mut(tmpl).value.values_mut() {
        *v += 100.0;
    }
    let qw = model.query[0].conv.w;
    for v in model.params.get_mut(qw).value.values_mut() {
        *v -= 50.0;
    }
    let after = crate::harness::predict(&model, &cfg, rec, crate::data::MissingPattern::full()).unwrap();
    assert_eq!(before.to_bits(), after.to_bits());
}

#[test]
fn baseline_masked_modality_is_inert() {
    // under the baseline, a masked modality's stored features cannot leak
    let cfg = small_cfg().ablation_baseline();
    let bundle = small_bundle(10);
    let model = Model::new(&cfg, bundle.dims).unwrap();
    let mut rec = bundle.records[0].clone();
    let pattern: crate::data::MissingPattern = "LA".parse().unwrap();
    let before = crate::harness::predict(&model, &cfg, &rec, pattern).unwrap();
    for v in rec.features.get_mut(Modality::V).values_mut() {
        *v = 123.0;
    }
    let after = crate::harness::predict(&model, &cfg, &rec, pattern).unwrap();
    assert_eq!(before.to_bits(), after.to_bits());
}

#[test]
fn full_loss_passes_grad_check() {
    let cfg = TrainerConfig { d: 8, k_templates: 4, seed: 3, ..TrainerConfig::default() };
    let bundle = small_bundle(11);
    let batch: Vec<&crate::data::SampleRecord> = bundle.records[..2].iter().collect();
    let err = grad_check_full_loss(&cfg, &batch, 1e-5).unwrap();
    assert!(err < 1e-4, "full-loss grad err {err}");
}

#[test]
fn full_loss_grad_check_with_prototype_grads() {
    let cfg = TrainerConfig {
        d: 6,
        k_templates: 3,
        seed: 4,
        prototype_grads: true,
        ..TrainerConfig::default()
    };
    let bundle = small_bundle(12);
    let batch: Vec<&crate::data::SampleRecord> = bundle.records[..2].iter().collect();
    let err = grad_check_full_loss(&cfg, &batch, 1e-5).unwrap();
    assert!(err < 1e-4, "prototype-grads grad err {err}");
}

#[test]
fn prototype_grads_reach_modal_encoders_via_intra_loss() {
    let mut cfg = small_cfg();
    cfg.prototype_grads = true;
    // isolate the prototype pathway: only intra/inter carry weight
    cfg.loss_weights.lambda1 = 0.0;
    cfg.loss_weights.lambda2 = 0.0;
    cfg.loss_weights.lambda5 = 0.0;
    let bundle = small_bundle(13);
    let model = Model::new(&cfg, bundle.dims).unwrap();
    let batch: Vec<&crate::data::SampleRecord> = bundle.records[..3].iter().collect();
    let patterns = vec![crate::data::MissingPattern::full(); 3];
    let tape = Tape::new();
    let bound = model.params.bind(&tape);
    let out = batch_loss(&tape, &bound, &model, &batch, &patterns, Stage::One, &cfg, None).unwrap();
    tape.backward(out.total);
    let g = tape.grad(bound.var(model.modal[0].proj.w));
    assert!(g.values().iter().any(|v| *v != 0.0), "no gradient reached the modal encoder");
}
