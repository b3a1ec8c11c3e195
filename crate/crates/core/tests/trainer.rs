mod common;

use common::*;
use omnisparse::io::Dataset;
use omnisparse::sparsity::SparsityConfig;
use omnisparse::tensor::{AdamConfig, Tape, Tensor};
use omnisparse::trainer::{
    evaluate, sandwich_sample, subnet_loss, supernet_train_step_observed, teacher_logits, train, StepObserver,
    SupernetModel, Trainer, TrainMode, TRAIN_STREAM,
};
use omnisparse::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn batch(data: &Dataset, n: usize) -> (Tensor, Vec<usize>) {
    data.gather(&(0..n).collect::<Vec<_>>())
}

fn all_modes() -> Vec<TrainMode> {
    vec![
        TrainMode::Supernet,
        TrainMode::single_no_kd(0.5, SMALL_ARCH.layers),
        TrainMode::single_kd(0.7, SMALL_ARCH.layers),
        TrainMode::dsnn(),
    ]
}

/// Captures parameter gradients right before the optimizer consumes them.
#[derive(Default)]
struct GradCapture(Vec<Vec<f64>>);

impl StepObserver for GradCapture {
    fn after_backward(&mut self, _step: u64, model: &SupernetModel) {
        self.0 = model.params.iter().map(|p| p.grad.as_slice().to_vec()).collect();
    }
}

#[test]
fn zero_learning_rate_leaves_weights() {
    let (data, _) = small_data(1);
    let mut cfg = small_cfg(TrainMode::Supernet, 5);
    cfg.adam = AdamConfig::with_lr(0.0);
    let model = small_model(2);
    let before: Vec<Tensor> = model.params.iter().map(|p| p.value.clone()).collect();
    let (after, _) = train(model, &data, &small_space(), &cfg, None).unwrap();
    let now: Vec<Tensor> = after.params.iter().map(|p| p.value.clone()).collect();
    assert_eq!(before, now);
    assert_eq!(after.adam.step_count, 5);
}

#[test]
fn zero_steps_leave_the_model_untouched() {
    let (data, _) = small_data(1);
    let model = small_model(2);
    let (after, history) = train(model.clone(), &data, &small_space(), &small_cfg(TrainMode::Supernet, 0), None).unwrap();
    assert!(history.is_empty());
    assert_eq!(after, model);
}

#[test]
fn zero_kd_weight_disables_distillation() {
    let (data, _) = small_data(1);
    let mut cfg = small_cfg(TrainMode::Supernet, 3);
    cfg.kd_weight = 0.0;
    let (_, history) = train(small_model(2), &data, &small_space(), &cfg, None).unwrap();
    for m in &history {
        assert!(m.distill_losses.iter().all(Option::is_none));
        assert_eq!(m.losses, m.task_losses);
        assert_eq!(m.batch_equivalents, 1.0);
    }
}

#[test]
fn step_gradient_equals_mean_of_separate_subnet_gradients() {
    let (data, _) = small_data(4);
    let cfg = small_cfg(TrainMode::Supernet, 1);
    let space = small_space();
    let mut model = small_model(5);
    // Move past the warm-up so sparse configs are actually applied.
    model.adam.step_count = 0;
    let step = 200;
    let (x, y) = batch(&data, cfg.batch_size);
    let mut rng = ChaCha8Rng::seed_from_u64(77);

    // Oracle: each sub-network on its own tape, gradients accumulated.
    let mut oracle = model.clone();
    let mut orng = rng.clone();
    let scores = oracle.layer_scores().unwrap();
    let configs = sandwich_sample(&space, &mut orng);
    let q = cfg.batch_size / 4;
    for (i, c) in configs.iter().enumerate() {
        let idx: Vec<usize> = (i * q..(i + 1) * q).collect();
        let xs = x.select_rows(&idx);
        let ys = &y[i * q..(i + 1) * q];
        let t = (i > 0).then(|| teacher_logits(&oracle, &xs).unwrap());
        let mut tape = Tape::new();
        let l = subnet_loss(
            &mut tape,
            &oracle,
            &scores,
            c.ratios(),
            &xs,
            ys,
            t.as_ref(),
            cfg.kd_weight,
            cfg.kd_temperature,
            &mut orng,
        )
        .unwrap();
        let scaled = tape.weighted_sum(&[(l.node, 0.25)]).unwrap();
        tape.backward(scaled, &mut oracle.params).unwrap();
    }

    let mut seen = GradCapture::default();
    let m = supernet_train_step_observed(&mut model, &x, &y, step, &space, &cfg, &mut rng, &mut seen).unwrap();
    assert_eq!(m.configs, configs.to_vec());
    for (got, p) in seen.0.iter().zip(oracle.params.iter()) {
        for (a, b) in got.iter().zip(p.grad.as_slice()) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn sandwich_always_contains_dense_and_sparsest() {
    let (data, _) = small_data(1);
    let (_, history) = train(small_model(2), &data, &small_space(), &small_cfg(TrainMode::Supernet, 20), None).unwrap();
    let space = small_space();
    for m in &history {
        assert_eq!(m.configs.len(), 4);
        assert_eq!(m.configs[0], space.dense());
        assert_eq!(m.configs[1], space.sparsest());
        assert!(space.is_sampleable(&m.configs[2]) && space.is_sampleable(&m.configs[3]));
    }
}

#[test]
fn applied_sparsity_respects_the_cap() {
    let (data, _) = small_data(1);
    for mode in all_modes() {
        let teacher = small_model(9);
        let (_, history) = train(small_model(2), &data, &small_space(), &small_cfg(mode, 100), Some(&teacher)).unwrap();
        for m in &history {
            assert!(m.effective.iter().flatten().all(|&s| s <= m.cap), "step {}", m.step);
        }
        assert_eq!(history[0].cap, 0.0);
        assert_eq!(history[99].cap, 0.8);
    }
}

#[test]
fn compute_accounting_per_mode() {
    let (data, _) = small_data(1);
    let teacher = small_model(9);
    let expected = [1.25, 1.0, 1.0 + 1.0 / 3.0, 4.0];
    for (mode, want) in all_modes().into_iter().zip(expected) {
        let (_, history) = train(small_model(2), &data, &small_space(), &small_cfg(mode, 3), Some(&teacher)).unwrap();
        for m in &history {
            assert!((m.batch_equivalents - want).abs() < 1e-12, "{} vs {want}", m.batch_equivalents);
        }
    }
}

#[test]
fn every_mode_reduces_validation_loss() {
    let (data, val) = small_data(6);
    let teacher = small_model(9);
    for mode in all_modes() {
        let probe = match &mode {
            TrainMode::Single { config, .. } => config.ratios().to_vec(),
            _ => vec![0.5; SMALL_ARCH.layers],
        };
        let model = small_model(2);
        let before = evaluate(&model, &probe, &val).unwrap();
        let (after, _) = train(model, &data, &small_space(), &small_cfg(mode.clone(), 300), Some(&teacher)).unwrap();
        let now = evaluate(&after, &probe, &val).unwrap();
        assert!(now < 0.9 * before, "{}: {before} -> {now}", mode.name());
    }
}

#[test]
fn weights_are_never_copied() {
    let (data, _) = small_data(1);
    let teacher = small_model(9);
    for mode in all_modes() {
        let model = small_model(2);
        let ptrs: Vec<*const f64> = model.prunable_ids().iter().map(|ids| model.params.value(ids.weight).as_slice().as_ptr()).collect();
        let mut t = Trainer::new(model, small_cfg(mode, 10), small_space()).unwrap();
        t.run(&data, 10, Some(&teacher), &mut ()).unwrap();
        let after: Vec<*const f64> = t.model.prunable_ids().iter().map(|ids| t.model.params.value(ids.weight).as_slice().as_ptr()).collect();
        assert_eq!(ptrs, after);
    }
}

#[test]
fn training_is_deterministic() {
    let (data, _) = small_data(1);
    let run = || {
        let (m, h) = train(small_model(2), &data, &small_space(), &small_cfg(TrainMode::Supernet, 40), None).unwrap();
        (m.state_digest(), h.iter().map(|s| s.total_loss.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn trainer_rng_uses_the_training_stream() {
    let t = Trainer::new(small_model(1), small_cfg(TrainMode::Supernet, 1), small_space()).unwrap();
    assert_eq!(t.rng_state().stream, TRAIN_STREAM);
    assert_eq!(t.rng_state().word_pos, 0);
}

#[test]
fn evaluation_is_deterministic_and_near_uniform_at_init() {
    let (_, val) = small_data(2);
    let model = small_model(3);
    let cfg = SparsityConfig::uniform(0.6, SMALL_ARCH.layers);
    let a = evaluate(&model, cfg.ratios(), &val).unwrap();
    let b = evaluate(&model, cfg.ratios(), &val).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    let ln_c = (SMALL_ARCH.classes as f64).ln();
    assert!((a - ln_c).abs() <= 0.2 * ln_c, "{a} vs {ln_c}");
}

#[test]
fn single_kd_requires_a_teacher() {
    let (data, _) = small_data(1);
    let r = train(small_model(2), &data, &small_space(), &small_cfg(TrainMode::single_kd(0.5, 2), 1), None);
    assert!(matches!(r, Err(Error::Parameter(_))));
}

#[test]
fn non_finite_state_surfaces_as_divergence() {
    let (data, _) = small_data(1);
    let mut model = small_model(2);
    let id = model.prunable_ids()[0].weight;
    model.params.get_mut(id).value.as_mut_slice()[0] = f64::INFINITY;
    let r = train(model, &data, &small_space(), &small_cfg(TrainMode::Supernet, 1), None);
    assert!(matches!(r, Err(Error::Divergence { step: 0, .. })), "{r:?}");
}
