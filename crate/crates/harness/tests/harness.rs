use harness::{
    assemble, avg_n, cosine_lr, evaluate_probe, param_checksum, profile_step, run_stage,
    step_flops, synthetic_probe, BenchScores, CorpusItem, EncoderConfig, FeatureLayer,
    HarnessError, LmConfig, Model, ModelConfig, Stage, StageConfig, StubVisionEncoder,
};
use projectors::{ProjectorKind, ProjectorSpec};
use tensor_core::ops;

fn tiny_config(kind: ProjectorKind, m: usize, vocab: usize) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            layers: 2,
            grid: (4, 4),
            d_v: 8,
            feature_layer: FeatureLayer::SecondLast,
            seed: 11,
        },
        projector: ProjectorSpec {
            num_features: Some(16),
            ..ProjectorSpec::new(kind, m, 8, 16)
        },
        lm: LmConfig {
            vocab,
            d_t: 16,
            depth: 1,
            heads: 2,
            max_seq: 128,
        },
        image_indicator: false,
    }
}

fn item(image: &str, input: &str, response: &str) -> CorpusItem {
    CorpusItem {
        image_id: image.to_string(),
        input: input.to_string(),
        response: response.to_string(),
        dataset: String::new(),
    }
}

fn set_lm_param(model: &Model, name: &str, value: Vec<f64>) {
    let params = model.lm.params();
    let (_, t) = params.iter().find(|(n, _)| n == name).expect("param");
    t.set_data(&value);
}

#[test]
fn uniform_predictor_loss_is_ln_vocab() {
    let cfg = tiny_config(ProjectorKind::Linear, 16, 4);
    let model = assemble(&cfg, 3).unwrap();
    // Zeroed output projection forces the uniform distribution over V=4.
    set_lm_param(&model, "w_out", vec![0.0; 4 * 16]);
    set_lm_param(&model, "b_out", vec![0.0; 4]);
    let it = item("img", "Human: q AI: ", "abc");
    let loss = model.response_loss(&[&it]).unwrap().item();
    assert!((loss - 4.0f64.ln()).abs() < 1e-12, "loss {loss}");
}

#[test]
fn deterministic_correct_predictor_loss_is_zero() {
    let cfg = tiny_config(ProjectorKind::Linear, 16, 64);
    let model = assemble(&cfg, 3).unwrap();
    let target = model.lm.tokenize("a")[0];
    let mut bias = vec![0.0; 64];
    bias[target] = 1e4;
    set_lm_param(&model, "w_out", vec![0.0; 64 * 16]);
    set_lm_param(&model, "b_out", bias);
    let it = item("img", "Human: q AI: ", "aaa");
    let loss = model.response_loss(&[&it]).unwrap().item();
    assert_eq!(loss, 0.0);
}

#[test]
fn response_loss_matches_hand_computed_nll() {
    let cfg = tiny_config(ProjectorKind::Linear, 16, 64);
    let model = assemble(&cfg, 3).unwrap();
    // Constant logits b at every position: NLL per token is hand-computable.
    let b: Vec<f64> = (0..64).map(|i| (i as f64) * 0.03 - 1.0).collect();
    set_lm_param(&model, "w_out", vec![0.0; 64 * 16]);
    set_lm_param(&model, "b_out", b.clone());
    let it = item("img", "Human: q AI: ", "ab");
    let ids = model.lm.tokenize("ab");
    let z: f64 = b.iter().map(|x| x.exp()).sum();
    let expected = ids.iter().map(|&t| z.ln() - b[t]).sum::<f64>() / ids.len() as f64;
    let loss = model.response_loss(&[&it]).unwrap().item();
    assert!((loss - expected).abs() < 1e-12, "loss {loss} expected {expected}");
}

#[test]
fn empty_response_rejected() {
    let cfg = tiny_config(ProjectorKind::Linear, 16, 64);
    let model = assemble(&cfg, 3).unwrap();
    let it = item("img", "Human: q AI: ", "");
    assert!(matches!(
        model.response_loss(&[&it]),
        Err(HarnessError::EmptyResponse)
    ));
}

#[test]
fn input_span_logit_perturbation_leaves_loss_unchanged() {
    let cfg = tiny_config(ProjectorKind::Mlp, 16, 64);
    let model = assemble(&cfg, 5).unwrap();
    let it = item("img-7", "Human: what is shown? AI: ", "a cat");
    let (logits, targets) = model.item_logits(&it).unwrap();
    let base = ops::masked_cross_entropy(&logits, &targets).item();
    let v = logits.shape()[1];
    let mut data = logits.to_vec();
    for (row, t) in targets.iter().enumerate() {
        if t.is_none() {
            for c in 0..v {
                data[row * v + c] += (row as f64 + 1.0) * 3.7 - c as f64;
            }
        }
    }
    let perturbed = tensor_core::Tensor::new(logits.shape(), data);
    let after = ops::masked_cross_entropy(&perturbed, &targets).item();
    assert_eq!(base, after);
}

#[test]
fn assemble_rejects_width_mismatches() {
    let mut cfg = tiny_config(ProjectorKind::Linear, 16, 64);
    cfg.projector.d_v = 12;
    assert!(matches!(
        assemble(&cfg, 0),
        Err(HarnessError::DimensionMismatch(_))
    ));
    let mut cfg = tiny_config(ProjectorKind::Linear, 16, 64);
    cfg.projector.d_t = 24;
    assert!(matches!(
        assemble(&cfg, 0),
        Err(HarnessError::DimensionMismatch(_))
    ));
}

#[test]
fn indicator_grows_sequence_by_exactly_two() {
    let cfg = tiny_config(ProjectorKind::Linear, 16, 64);
    let model = assemble(&cfg, 3).unwrap();
    let fm = model.encoder.features("img");
    let vis = model.projector.forward(&fm).unwrap().tokens.tokens;
    let ids = model.lm.tokenize("hello");
    let off = model.lm.forward(Some(&vis), &ids, false).unwrap();
    let on = model.lm.forward(Some(&vis), &ids, true).unwrap();
    assert_eq!(on.shape()[0], off.shape()[0] + 2);
}

#[test]
fn encoder_is_deterministic_and_layer_selector_matters() {
    let cfg = EncoderConfig {
        layers: 3,
        grid: (4, 4),
        d_v: 8,
        feature_layer: FeatureLayer::Last,
        seed: 21,
    };
    let enc = StubVisionEncoder::new(cfg.clone());
    let a = enc.features("x").features.to_vec();
    let b = enc.features("x").features.to_vec();
    assert_eq!(a, b);
    let c = enc.features("y").features.to_vec();
    assert_ne!(a, c);
    let enc2 = StubVisionEncoder::new(EncoderConfig {
        feature_layer: FeatureLayer::SecondLast,
        ..cfg
    });
    assert_ne!(a, enc2.features("x").features.to_vec());
}

#[test]
fn schedule_warms_up_linearly_then_decays_to_min() {
    let (lr, min_lr, warmup, total) = (3e-4, 1e-5, 20, 200);
    assert!((cosine_lr(lr, min_lr, warmup, total, 1) - lr / 20.0).abs() < 1e-15);
    assert!((cosine_lr(lr, min_lr, warmup, total, warmup) - lr).abs() < 1e-15);
    assert!((cosine_lr(lr, min_lr, warmup, total, total) - min_lr).abs() < 1e-9);
    for s in warmup..total {
        assert!(cosine_lr(lr, min_lr, warmup, total, s) >= cosine_lr(lr, min_lr, warmup, total, s + 1));
    }
}

fn stage_cfg(stage: Stage, steps: usize, lr: f64) -> StageConfig {
    StageConfig {
        stage,
        batch_size: 4,
        lr,
        min_lr: lr / 10.0,
        warmup_steps: steps / 10 + 1,
        total_steps: steps,
        weight_decay: 0.0,
        beta1: 0.9,
        beta2: 0.98,
        eps: 1e-6,
        grad_clip: 1.0,
    }
}

fn memorization_corpus() -> Vec<CorpusItem> {
    vec![
        item("img-a", "Human: color? AI: ", "red"),
        item("img-b", "Human: color? AI: ", "blue"),
        item("img-c", "Human: shape? AI: ", "round"),
        item("img-d", "Human: shape? AI: ", "flat"),
    ]
}

#[test]
fn pretrain_freezes_lm_and_encoder_bytes() {
    let cfg = tiny_config(ProjectorKind::Resampler, 4, 64);
    let mut model = assemble(&cfg, 9).unwrap();
    let lm_before: Vec<Vec<f64>> = model.lm.params().iter().map(|(_, t)| t.to_vec()).collect();
    let enc_before = model.encoder.checksum();
    let proj_before: Vec<Vec<f64>> =
        model.projector.params().iter().map(|(_, t)| t.to_vec()).collect();
    let log = run_stage(&mut model, &memorization_corpus(), &stage_cfg(Stage::Pretrain, 10, 1e-3), 1)
        .unwrap();
    let lm_after: Vec<Vec<f64>> = model.lm.params().iter().map(|(_, t)| t.to_vec()).collect();
    assert_eq!(lm_before, lm_after, "LM must stay frozen in stage 1");
    assert_eq!(enc_before, model.encoder.checksum());
    let proj_after: Vec<Vec<f64>> =
        model.projector.params().iter().map(|(_, t)| t.to_vec()).collect();
    assert_ne!(proj_before, proj_after, "projector must train");
    let first = log.rows[0].frozen_checksum;
    assert!(log.rows.iter().all(|r| r.frozen_checksum == first));
}

#[test]
fn instruction_tune_step_moves_projector_and_lm_but_not_encoder() {
    let cfg = tiny_config(ProjectorKind::CAbstractor, 4, 64);
    let mut model = assemble(&cfg, 9).unwrap();
    let lm_before: Vec<Vec<f64>> = model.lm.params().iter().map(|(_, t)| t.to_vec()).collect();
    let proj_before: Vec<Vec<f64>> =
        model.projector.params().iter().map(|(_, t)| t.to_vec()).collect();
    let enc_before = model.encoder.checksum();
    run_stage(
        &mut model,
        &memorization_corpus(),
        &stage_cfg(Stage::InstructionTune, 1, 1e-3),
        1,
    )
    .unwrap();
    assert_ne!(lm_before, model.lm.params().iter().map(|(_, t)| t.to_vec()).collect::<Vec<_>>());
    assert_ne!(
        proj_before,
        model.projector.params().iter().map(|(_, t)| t.to_vec()).collect::<Vec<_>>()
    );
    assert_eq!(enc_before, model.encoder.checksum());
}

#[test]
fn run_stage_aborts_on_non_finite_loss() {
    let cfg = tiny_config(ProjectorKind::Linear, 16, 64);
    let mut model = assemble(&cfg, 9).unwrap();
    let params = model.lm.params();
    let (_, w_out) = params.iter().find(|(n, _)| n == "w_out").unwrap();
    w_out.set_data(&vec![f64::INFINITY; w_out.numel()]);
    match run_stage(
        &mut model,
        &memorization_corpus(),
        &stage_cfg(Stage::InstructionTune, 5, 1e-3),
        1,
    ) {
        Err(HarnessError::NonFiniteLoss { step }) => assert_eq!(step, 1),
        other => panic!("expected non-finite abort, got {:?}", other.map(|l| l.rows.len())),
    }
}

#[test]
fn short_training_reduces_loss() {
    let cfg = tiny_config(ProjectorKind::Mlp, 16, 64);
    let mut model = assemble(&cfg, 17).unwrap();
    let corpus = memorization_corpus();
    let log = run_stage(&mut model, &corpus, &stage_cfg(Stage::InstructionTune, 60, 3e-3), 2).unwrap();
    assert!(
        log.final_loss() < log.rows[0].loss / 2.0,
        "loss did not drop: {} -> {}",
        log.rows[0].loss,
        log.final_loss()
    );
}

#[test]
fn avg_n_examples() {
    let all_at_bound = BenchScores::new(vec![("a", 100.0, 100.0), ("b", 2000.0, 2000.0)]);
    assert!((avg_n(&all_at_bound).unwrap() - 100.0).abs() < 1e-12);
    let mixed = BenchScores::new(vec![("mmb", 69.2, 100.0), ("seed", 64.2, 100.0), ("mme", 1568.2, 2000.0)]);
    assert!((avg_n(&mixed).unwrap() - 70.6).abs() < 0.05);
    let mut missing = mixed.clone();
    missing.entries[1].bound = None;
    assert!(matches!(avg_n(&missing), Err(HarnessError::MissingBound { .. })));
    let out_of_range = BenchScores::new(vec![("a", 250.0, 200.0)]);
    assert!(matches!(avg_n(&out_of_range), Err(HarnessError::ScoreOutOfRange { .. })));
}

#[test]
fn untrained_probe_accuracy_is_chance_level() {
    let cfg = tiny_config(ProjectorKind::Linear, 16, 64);
    let model = assemble(&cfg, 41).unwrap();
    let items = synthetic_probe(1000, 4, 13);
    let scores = evaluate_probe(&model, &items).unwrap();
    let acc = scores.entries[0].score;
    assert!((acc - 25.0).abs() <= 5.0, "accuracy {acc}");
}

#[test]
fn memorizing_the_probe_reaches_full_accuracy() {
    let cfg = tiny_config(ProjectorKind::Resampler, 4, 64);
    let mut model = assemble(&cfg, 23).unwrap();
    let items = synthetic_probe(4, 2, 5);
    let corpus: Vec<CorpusItem> = items
        .iter()
        .map(|p| CorpusItem {
            image_id: p.image_id.clone(),
            input: format!("Human: {} AI: ", p.question),
            response: p.options[p.answer].clone(),
            dataset: String::new(),
        })
        .collect();
    run_stage(&mut model, &corpus, &stage_cfg(Stage::InstructionTune, 300, 3e-3), 3).unwrap();
    let scores = evaluate_probe(&model, &items).unwrap();
    assert_eq!(scores.entries[0].score, 100.0);
}

#[test]
fn flops_increase_with_token_count_and_lm_dominates() {
    for kind in [
        ProjectorKind::Resampler,
        ProjectorKind::CAbstractor,
        ProjectorKind::DAbstractor,
    ] {
        let lm = LmConfig::toy();
        let mut last_total = 0u64;
        for m in [16, 64, 144, 256, 400, 576] {
            let spec = ProjectorSpec {
                allow_upsample: true,
                num_features: Some(256),
                ..ProjectorSpec::new(kind, m, 32, 64)
            };
            let (proj, lm_flops) = step_flops(&spec, &lm, 256, 64);
            assert!(lm_flops > proj, "{kind} M={m}: projector {proj} vs LM {lm_flops}");
            assert!(proj + lm_flops > last_total, "{kind} not increasing at M={m}");
            last_total = proj + lm_flops;
        }
    }
}

#[test]
fn profile_reports_median_over_requested_reps() {
    let spec = ProjectorSpec {
        num_features: Some(16),
        ..ProjectorSpec::new(ProjectorKind::CAbstractor, 4, 8, 16)
    };
    let lm = LmConfig {
        vocab: 64,
        d_t: 16,
        depth: 1,
        heads: 2,
        max_seq: 64,
    };
    let report = profile_step(&spec, &lm, 16, 8, 5).unwrap();
    assert_eq!(report.reps, 5);
    assert!(report.median_wall_secs > 0.0);
    assert_eq!(report.total_flops, report.projector_flops + report.lm_flops);
    // The analytic count never depends on the measurement.
    let again = profile_step(&spec, &lm, 16, 8, 5).unwrap();
    assert_eq!(report.total_flops, again.total_flops);
}

#[test]
fn checkpoint_roundtrip_preserves_behavior() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let cfg = tiny_config(ProjectorKind::DAbstractor, 4, 64);
    let model = assemble(&cfg, 31).unwrap();
    let it = item("img-z", "Human: q AI: ", "word");
    let before = model.response_loss(&[&it]).unwrap().item();
    harness::save_model(&model, &cfg, &path).unwrap();
    let (restored, _) = harness::load_model(&path).unwrap();
    let after = restored.response_loss(&[&it]).unwrap().item();
    assert_eq!(before, after);
}

#[test]
fn param_checksum_moves_with_any_entry() {
    let cfg = tiny_config(ProjectorKind::Linear, 16, 64);
    let model = assemble(&cfg, 3).unwrap();
    let params = model.lm.params();
    let before = param_checksum(&params);
    params[0].1.nudge(0, 1e-3);
    assert_ne!(before, param_checksum(&params));
}
