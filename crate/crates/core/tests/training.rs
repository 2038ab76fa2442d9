mod common;

use common::tiny_experiment;
use hvg::config::ExperimentConfig;
use hvg::data::Dataset;
use hvg::layers::{Module, RunningStats, Slot, Visitor};
use hvg::training::*;
use hvg::HvgError;
use hvg_tensor::{Param, Tape, Tensor};

fn dataset(exp: &ExperimentConfig) -> Dataset {
    Dataset::synthetic(&exp.data.synthetic).unwrap()
}

/// Every parameter, buffer and statistic of a module, by name.
fn full_state(m: &mut dyn Module) -> Vec<(String, Tensor, Option<RunningStats>)> {
    let mut out = Vec::new();
    m.visit(&mut Visitor::new(&mut |name, s| match s {
        Slot::Param(p) => out.push((name.to_string(), p.value.clone(), None)),
        Slot::Buffer(t) => out.push((name.to_string(), t.clone(), None)),
        Slot::Stats(st) => out.push((name.to_string(), Tensor::scalar(0.0), Some(st.clone()))),
    }));
    out
}

fn params_bits(m: &mut dyn Module) -> Vec<(String, Vec<u64>)> {
    m.param_values().into_iter().map(|(n, t)| (n, t.data().iter().map(|v| v.to_bits()).collect())).collect()
}

#[test]
fn hinge_losses_match_hand_values() {
    let mut tape = Tape::new();
    let real = tape.constant(Tensor::new(&[2, 2], vec![2.0, 0.5, -1.0, 1.0]));
    let fake = tape.constant(Tensor::new(&[2, 2], vec![-2.0, 0.0, 0.5, -0.5]));
    let d = d_hinge_loss(&mut tape, real, fake);
    // real: relu(1 - x) = 0, 0.5, 2, 0 -> 0.625; fake: relu(1 + x) = 0, 1, 1.5, 0.5 -> 0.75
    assert!((tape.value(d).item() - 1.375).abs() < 1e-15);
    let g = g_hinge_loss(&mut tape, fake);
    assert!((tape.value(g).item() - 0.5).abs() < 1e-15);
}

#[test]
fn hinge_gradients_are_indicator_masks() {
    let mut tape = Tape::new();
    let real = tape.leaf(Tensor::new(&[1, 3], vec![0.0, 1.5, 0.9]));
    let fake = tape.leaf(Tensor::new(&[1, 3], vec![-1.5, 0.0, -0.9]));
    let d = d_hinge_loss(&mut tape, real, fake);
    let g = tape.backward(d);
    let third = 1.0 / 3.0;
    assert_eq!(g.wrt(real).unwrap().data(), &[-third, 0.0, -third]);
    assert_eq!(g.wrt(fake).unwrap().data(), &[0.0, third, third]);
}

struct One(Param);

impl Module for One {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.param("w", &mut self.0);
    }
}

#[test]
fn adam_first_steps_match_closed_form() {
    let cfg = tiny_experiment().optimizer;
    let mut opt = Adam::new(0.1, &cfg);
    let mut m = One(Param::new(Tensor::new(&[2], vec![1.0, -1.0])));
    let grads = |m: &One, g: [f64; 2]| {
        let mut tape = Tape::new();
        let w = tape.param(&m.0);
        let c = tape.constant(Tensor::new(&[2], g.to_vec()));
        let p = tape.mul(w, c);
        let s = tape.sum_all(p);
        tape.backward(s)
    };
    let g = grads(&m, [3.0, -0.5]);
    opt.update(&mut m, &g);
    // Step 1 with beta1 = 0: m̂ = g, v̂ = g², update = lr · g / (|g| + eps).
    let step = |g: f64| 0.1 * g / (g.abs() + 1e-8);
    assert!((m.0.value.data()[0] - (1.0 - step(3.0))).abs() < 1e-15);
    assert!((m.0.value.data()[1] - (-1.0 - step(-0.5))).abs() < 1e-15);
    // Step 2: v = 0.999·g1² + 0.001·g2², corrected by 1 − 0.999².
    let before = m.0.value.clone();
    let g = grads(&m, [1.0, 1.0]);
    opt.update(&mut m, &g);
    let v = |g1: f64, g2: f64| (0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2) / (1.0 - 0.999f64.powi(2));
    for (i, g1) in [3.0, -0.5].into_iter().enumerate() {
        let want = before.data()[i] - 0.1 * 1.0 / (v(g1, 1.0).sqrt() + 1e-8);
        assert!((m.0.value.data()[i] - want).abs() < 1e-12);
    }
    assert_eq!(opt.step, 2);
}

#[test]
fn zero_learning_rate_leaves_weights_bit_identical() {
    let mut exp = tiny_experiment();
    exp.optimizer.lr_g = 0.0;
    exp.optimizer.lr_d = 0.0;
    let ds = dataset(&exp);
    let mut st = LevelState::new(&exp, 0, ds.num_classes).unwrap();
    let before = params_bits(&mut st.model);
    for _ in 0..2 {
        train_first_level_step(&mut st, &ds, &exp).unwrap();
    }
    assert_eq!(before, params_bits(&mut st.model));
}

#[test]
fn each_optimizer_only_moves_its_own_network() {
    let mut exp = tiny_experiment();
    exp.optimizer.lr_g = 0.0;
    let ds = dataset(&exp);
    let mut st = LevelState::new(&exp, 0, ds.num_classes).unwrap();
    let (g0, d0) = (params_bits(&mut st.model.g), params_bits(&mut st.model.d));
    train_first_level_step(&mut st, &ds, &exp).unwrap();
    assert_eq!(g0, params_bits(&mut st.model.g));
    assert_ne!(d0, params_bits(&mut st.model.d));

    let mut exp = tiny_experiment();
    exp.optimizer.lr_d = 0.0;
    let mut st = LevelState::new(&exp, 0, ds.num_classes).unwrap();
    let (g0, d0) = (params_bits(&mut st.model.g), params_bits(&mut st.model.d));
    train_first_level_step(&mut st, &ds, &exp).unwrap();
    assert_ne!(g0, params_bits(&mut st.model.g));
    assert_eq!(d0, params_bits(&mut st.model.d));
}

#[test]
fn first_level_losses_stay_finite_and_counters_advance() {
    let exp = tiny_experiment();
    let ds = dataset(&exp);
    let mut st = LevelState::new(&exp, 0, ds.num_classes).unwrap();
    for i in 1..=4 {
        let m = train_first_level_step(&mut st, &ds, &exp).unwrap();
        assert!(m.d_loss.is_finite() && m.g_loss.is_finite());
        assert!(m.d_loss >= 0.0);
        assert_eq!(m.iteration, i);
    }
    assert_eq!((st.g_updates, st.d_updates), (4, 8));
    assert_eq!(st.opt_d.step, 8);
    assert_eq!(st.opt_g.step, 4);
    assert_eq!(st.history.len(), 4);
}

#[test]
fn upsampler_training_leaves_frozen_levels_untouched() {
    let exp = tiny_experiment();
    let ds = dataset(&exp);
    let tmp = tempfile::tempdir().unwrap();
    let opts = TrainOptions { iterations: 1, checkpoint_every: 0, resume: false };
    train_level(0, &exp, &ds, tmp.path(), &opts, &mut |_| {}).unwrap();
    let mut frozen = load_frozen(tmp.path(), 1).unwrap();
    let before = full_state(&mut frozen.levels[0]);
    let mut st = LevelState::new(&exp, 1, ds.num_classes).unwrap();
    let g0 = params_bits(&mut st.model.g);
    for _ in 0..2 {
        let m = train_upsampler_step(&mut st, &mut frozen, &ds, &exp).unwrap();
        assert!(m.d_loss.is_finite() && m.g_loss.is_finite());
    }
    assert_eq!(before, full_state(&mut frozen.levels[0]));
    assert_ne!(g0, params_bits(&mut st.model.g));
}

#[test]
fn frozen_conditions_have_the_window_shape() {
    let exp = tiny_experiment();
    let ds = dataset(&exp);
    let tmp = tempfile::tempdir().unwrap();
    let opts = TrainOptions { iterations: 1, checkpoint_every: 0, resume: false };
    train_level(0, &exp, &ds, tmp.path(), &opts, &mut |_| {}).unwrap();
    let mut frozen = load_frozen(tmp.path(), 1).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    let c = frozen.sample_condition(&[0, 2, 1], 1.0, 3, &mut rng).unwrap();
    assert_eq!(c.dims().shape(), [3, 3, 3, 8, 8]);
    assert!(c.in_range(-1.0, 1.0));
    assert!(frozen.sample_condition(&[0], 1.0, 5, &mut rng).is_err());
}

#[test]
fn upsampler_requires_trained_lower_levels() {
    let exp = tiny_experiment();
    let ds = dataset(&exp);
    let tmp = tempfile::tempdir().unwrap();
    let opts = TrainOptions { iterations: 1, checkpoint_every: 0, resume: false };
    match train_level(1, &exp, &ds, tmp.path(), &opts, &mut |_| {}) {
        Err(HvgError::MissingPrerequisite { level: 2, missing: 1, .. }) => {}
        other => panic!("expected a missing prerequisite, got {other:?}"),
    }
    let mut st = LevelState::new(&exp, 1, ds.num_classes).unwrap();
    assert!(train_upsampler_step(&mut st, &mut FrozenHierarchy::default(), &ds, &exp).is_err());
    assert!(train_first_level_step(&mut st, &ds, &exp).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let exp = tiny_experiment();
    let ds = dataset(&exp);
    let mut st = LevelState::new(&exp, 1, ds.num_classes).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    // Give the optimizer and stats some state first.
    let opts = TrainOptions { iterations: 2, checkpoint_every: 0, resume: false };
    train_level(0, &exp, &ds, tmp.path(), &opts, &mut |_| {}).unwrap();
    let mut frozen = load_frozen(tmp.path(), 1).unwrap();
    train_upsampler_step(&mut st, &mut frozen, &ds, &exp).unwrap();

    let dir = tmp.path().join("copy");
    save_level(&dir, &exp, &mut st).unwrap();
    let mut back = load_level(&dir, &exp).unwrap();
    assert_eq!(full_state(&mut st.model), full_state(&mut back.model));
    assert_eq!(st.opt_g, back.opt_g);
    assert_eq!(st.opt_d, back.opt_d);
    assert_eq!(st.rng, back.rng);
    assert_eq!((st.iteration, st.d_updates, st.g_updates, st.seed), (back.iteration, back.d_updates, back.g_updates, back.seed));
    assert_eq!(st.history, back.history);
    assert_eq!(checkpoint_hash(&dir).unwrap().len(), 64);

    let mut other = exp.clone();
    other.levels[1].ch = 3;
    assert!(matches!(load_level(&dir, &other), Err(HvgError::Checkpoint(_))));
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let exp = tiny_experiment();
    let ds = dataset(&exp);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run = |root: &std::path::Path, iterations, resume| {
        let opts = TrainOptions { iterations, checkpoint_every: 0, resume };
        train_level(0, &exp, &ds, root, &opts, &mut |_| {}).unwrap()
    };
    let mut straight = run(a.path(), 3, false);
    run(b.path(), 1, false);
    let mut resumed = run(b.path(), 3, true);
    assert_eq!(full_state(&mut straight.model), full_state(&mut resumed.model));
    assert_eq!(straight.history, resumed.history);
    assert_eq!(straight.rng, resumed.rng);
}

#[test]
fn named_tensor_files_reject_corruption() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("w.bin");
    let ts = vec![
        NamedTensor { name: "a".into(), tensor: Tensor::new(&[2, 1], vec![1.5, -0.0]) },
        NamedTensor { name: "b.c".into(), tensor: Tensor::scalar(f64::MIN_POSITIVE) },
    ];
    write_named_tensors(&p, &ts).unwrap();
    assert_eq!(read_named_tensors(&p).unwrap(), ts);
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(&bytes[..4], WEIGHTS_MAGIC);
    std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(read_named_tensors(&p), Err(HvgError::Checkpoint(_))));
    std::fs::write(&p, b"nope").unwrap();
    assert!(matches!(read_named_tensors(&p), Err(HvgError::Checkpoint(_))));
}

#[test]
fn lock_is_exclusive_and_released_on_drop() {
    let tmp = tempfile::tempdir().unwrap();
    let l = CheckpointLock::acquire(tmp.path()).unwrap();
    assert!(matches!(CheckpointLock::acquire(tmp.path()), Err(HvgError::Checkpoint(_))));
    let exp = tiny_experiment();
    let ds = dataset(&exp);
    std::fs::create_dir_all(level_dir(tmp.path(), 0)).unwrap();
    let l0 = CheckpointLock::acquire(&level_dir(tmp.path(), 0)).unwrap();
    let opts = TrainOptions { iterations: 1, checkpoint_every: 0, resume: false };
    assert!(train_level(0, &exp, &ds, tmp.path(), &opts, &mut |_| {}).is_err());
    drop(l0);
    drop(l);
    CheckpointLock::acquire(tmp.path()).unwrap();
    train_level(0, &exp, &ds, tmp.path(), &opts, &mut |_| {}).unwrap();
}

#[test]
fn non_finite_loss_stops_training_and_dumps_the_batch() {
    let exp = tiny_experiment();
    let ds = dataset(&exp);
    let tmp = tempfile::tempdir().unwrap();
    let dir = level_dir(tmp.path(), 0);
    let mut st = LevelState::new(&exp, 0, ds.num_classes).unwrap();
    st.model.d.for_each_param(&mut |_, p| p.value = p.value.map(|_| f64::NAN));
    save_level(&dir, &exp, &mut st).unwrap();
    let opts = TrainOptions { iterations: 2, checkpoint_every: 0, resume: true };
    match train_level(0, &exp, &ds, tmp.path(), &opts, &mut |_| {}) {
        Err(HvgError::NonFiniteLoss { iteration: 0, .. }) => {}
        other => panic!("expected a non-finite loss, got {:?}", other.map(|s| s.iteration)),
    }
    let dumped = read_named_tensors(&dir.join("failure/last_batch.bin")).unwrap();
    assert_eq!(dumped[0].tensor.shape(), &[2, 4, 3, 8, 8]);
    assert!(dir.join("failure/rng.json").is_file());
    assert!(!dir.join(".lock").exists());
}
