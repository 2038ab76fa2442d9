mod common;

use std::path::Path;

use common::tiny_experiment;
use hvg::config::ExperimentConfig;
use hvg::data::Dataset;
use hvg::inference::*;
use hvg::layers::Module;
use hvg::training::{train_level, TrainOptions};
use hvg::HvgError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn trained(root: &Path) -> (ExperimentConfig, Hierarchy) {
    let exp = tiny_experiment();
    let ds = Dataset::synthetic(&exp.data.synthetic).unwrap();
    let opts = TrainOptions { iterations: 1, checkpoint_every: 0, resume: false };
    for l in 0..2 {
        train_level(l, &exp, &ds, root, &opts, &mut |_| {}).unwrap();
    }
    let h = Hierarchy::load(root, 2).unwrap();
    (exp, h)
}

fn stats(first_frames: usize) -> StatsOptions {
    StatsOptions { passes: 3, batch: 2, sigma: 1.0, first_frames }
}

#[test]
fn unrolled_sampling_needs_statistics_for_its_length() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, mut h) = trained(tmp.path());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // Level 2 was trained on 6-frame outputs, fewer than the 8 an unrolled
    // level-1 clip of 4 frames produces.
    assert!(matches!(h.sample(&[0, 1], 1.0, 4, &mut rng), Err(HvgError::MissingStats { timestep: 6, .. })));
    h.recompute_bn_stats(&stats(4), &mut rng).unwrap();
    let run = h.sample(&[0, 1], 1.0, 4, &mut rng).unwrap();
    assert_eq!(run.outputs[0].dims().shape(), [2, 4, 3, 8, 8]);
    assert!(matches!(
        h.sample(&[0, 1], 1.0, 8, &mut rng),
        Err(HvgError::MissingStats { timestep: 4, .. })
    ));
    h.recompute_bn_stats(&stats(8), &mut rng).unwrap();
    let run = h.sample(&[0, 1, 2], 0.5, 8, &mut rng).unwrap();
    assert_eq!(run.outputs[0].dims().shape(), [3, 8, 3, 8, 8]);
    assert_eq!(run.finest().dims().shape(), [3, 16, 3, 16, 16]);
    assert!(run.outputs.iter().all(|o| o.is_finite() && o.in_range(-1.0, 1.0)));
    assert_eq!(run.exact, vec![(0, 8), (0, 16)]);
    assert_eq!(h.output_frames(8), vec![8, 16]);
}

#[test]
fn recompute_resizes_statistics_to_the_unrolled_lengths() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, mut h) = trained(tmp.path());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    h.recompute_bn_stats(&stats(6), &mut rng).unwrap();
    for (l, want) in h.levels.iter_mut().zip([6, 12]) {
        l.g.for_each_stats(&mut |name, s| assert_eq!(s.timesteps(), want, "{name}"));
        l.g.for_each_stats(&mut |_, s| assert!(s.all_finite()));
    }
    // Shorter recompute drops timesteps that would otherwise be stale.
    h.recompute_bn_stats(&stats(2), &mut rng).unwrap();
    h.levels[1].g.for_each_stats(&mut |_, s| assert_eq!(s.timesteps(), 4));
    let before: Vec<_> = h.levels.iter_mut().map(|l| l.param_values()).collect();
    let mut snap = Vec::new();
    h.levels[1].for_each_stats(&mut |_, s| snap.push(s.clone()));
    h.recompute_bn_stats(&StatsOptions { passes: 0, ..stats(9) }, &mut rng).unwrap();
    let mut after = Vec::new();
    h.levels[1].for_each_stats(&mut |_, s| after.push(s.clone()));
    assert_eq!(snap, after);
    assert_eq!(before, h.levels.iter_mut().map(|l| l.param_values()).collect::<Vec<_>>());
    assert!(h.recompute_bn_stats(&StatsOptions { batch: 0, ..stats(2) }, &mut rng).is_err());
}

#[test]
fn long_horizon_statistics_have_positive_variance() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, mut h) = trained(tmp.path());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Four times the level-1 training length.
    h.recompute_bn_stats(&stats(16), &mut rng).unwrap();
    for l in &mut h.levels {
        l.for_each_stats(&mut |name, s| {
            assert!(s.var.iter().flatten().all(|&v| v > 0.0), "{name}");
        });
    }
    let run = h.sample(&[0], 1.0, 16, &mut rng).unwrap();
    assert_eq!(run.finest().frames(), 32);
}

#[test]
fn sampling_is_deterministic_in_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, mut h) = trained(tmp.path());
    h.recompute_bn_stats(&stats(4), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let a = h.sample(&[2, 0], 1.0, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = h.sample(&[2, 0], 1.0, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let c = h.sample(&[2, 0], 1.0, 4, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    assert_eq!(a.finest(), b.finest());
    assert_ne!(a.finest(), c.finest());
    let d = h.sample(&[2, 0], 0.5, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_ne!(a.finest(), d.finest());
}

#[test]
fn full_length_window_equals_the_full_unroll() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, mut h) = trained(tmp.path());
    h.recompute_bn_stats(&stats(4), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let a = h.sample(&[1], 1.0, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = h.sample_windowed(&[1], 1.0, 4, 0, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a.outputs, b.outputs);
    assert_eq!(a.exact, b.exact);
}

#[test]
fn windowed_sampling_matches_the_full_unroll_where_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, mut h) = trained(tmp.path());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    h.recompute_bn_stats(&stats(12), &mut rng).unwrap();
    let labels = [1, 2];
    let full = h.sample(&labels, 1.0, 12, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    for (start, len) in [(1, 10), (0, 7), (5, 7)] {
        let win = h.sample_windowed(&labels, 1.0, 12, start, len, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(win.offsets, vec![start, 2 * start]);
        assert_eq!(win.outputs[1].frames(), 2 * len);
        let (a, b) = win.exact[1];
        assert!(b > a, "window ({start}, {len}) has no exact frames");
        let off = win.offsets[1];
        let got = win.outputs[1].narrow_frames(a - off, b - a).unwrap();
        let want = full.outputs[1].narrow_frames(a, b - a).unwrap();
        assert_eq!(got, want, "window ({start}, {len})");
        // The exact range is not vacuous: frames next to an interior cut differ.
        if start > 0 {
            let edge = win.outputs[1].narrow_frames(0, 1).unwrap();
            assert_ne!(edge, full.outputs[1].narrow_frames(off, 1).unwrap());
        }
    }
    assert!(h.sample_windowed(&labels, 1.0, 12, 8, 5, &mut rng).is_err());
}

#[test]
fn loading_a_missing_level_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(
        Hierarchy::load(tmp.path(), 2),
        Err(HvgError::MissingPrerequisite { missing: 1, .. })
    ));
    assert_eq!(balanced_labels(5, 3), vec![0, 1, 2, 0, 1]);
}
