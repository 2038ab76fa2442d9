mod common;

use common::{module_grad_error, naive_conv, pseudo_random};
use hvg::config::{LevelConfig, TemporalUnit};
use hvg::discriminators::{LevelDiscriminators, MatchingD, SpatialD, TemporalD};
use hvg::generators::{latent_condition, FirstLevelG, Latent, UpsamplerG};
use hvg::layers::{Fwd, Mode, Module, Slot, Visitor};
use hvg::video::{nearest_resize, replicate_frames, VideoTensor};
use hvg::HvgError;
use hvg_tensor::{Tape, Tensor, Var};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tiny_first() -> LevelConfig {
    LevelConfig {
        temporal_factor: 1,
        spatial_factor: 1,
        frames: 4,
        resolution: 8,
        ch: 2,
        multipliers: vec![2, 1],
        temporal_unit: TemporalUnit::ConvGru,
        d_ch: 2,
        d_multipliers: vec![1, 2],
        spatial_frames: 2,
        matching_d: false,
        class_conditional: true,
        noise_dim: 4,
        embed_dim: 3,
    }
}

fn tiny_up() -> LevelConfig {
    LevelConfig {
        temporal_factor: 2,
        spatial_factor: 2,
        frames: 3,
        resolution: 16,
        multipliers: vec![2, 1, 1],
        temporal_unit: TemporalUnit::Separable3d,
        d_multipliers: vec![1, 2, 2],
        matching_d: true,
        ..tiny_first()
    }
}

fn latent(b: usize, dim: usize, labels: Option<Vec<usize>>, seed: u64) -> Latent {
    Latent::sample(b, dim, 1.0, labels, &mut rng(seed))
}

fn constant_video(b: usize, t: usize, c: usize, h: usize) -> Tensor {
    pseudo_random(&[b, t, c, h, h], 3).map(|v| 0.8 * v)
}

fn zero_all(m: &mut dyn Module) {
    for_params(m, &mut |_, p| *p = Tensor::zeros(p.shape()));
}

fn for_params(m: &mut dyn Module, f: &mut dyn FnMut(&str, &mut Tensor)) {
    let mut g = |name: &str, s: Slot<'_>| {
        if let Slot::Param(p) = s {
            f(name, &mut p.value)
        }
    };
    m.visit(&mut Visitor::new(&mut g));
}

#[test]
fn first_level_shapes_range_and_errors() {
    let cfg = tiny_first();
    let mut g = FirstLevelG::new(&cfg, 4, &mut rng(0)).unwrap();
    let lat = latent(2, 4, Some(vec![0, 3]), 1);
    let mut tape = Tape::no_grad();
    let y = {
        let mut fwd = Fwd::new(&mut tape, Mode::Train);
        g.forward(&mut fwd, &lat, 5).unwrap()
    };
    assert_eq!(tape.shape(y), &[2, 5, 3, 8, 8]);
    let v = VideoTensor::new(tape.value(y).clone()).unwrap();
    assert!(v.is_finite() && v.in_range(-1.0, 1.0));

    let mut fwd = Fwd::new(&mut tape, Mode::Train);
    assert!(g.forward(&mut fwd, &lat, 0).is_err());
    let bad = latent(2, 4, Some(vec![0, 4]), 1);
    assert!(matches!(g.forward(&mut fwd, &bad, 3), Err(HvgError::InvalidArgument(_))));

    let mut wrong = cfg.clone();
    wrong.resolution = 16;
    assert!(FirstLevelG::new(&wrong, 4, &mut rng(0)).is_err());
}

#[test]
fn zero_weights_give_constant_tanh_bias() {
    let mut g = FirstLevelG::new(&tiny_first(), 4, &mut rng(2)).unwrap();
    zero_all(&mut g);
    let b = [0.3, -0.7, 1.2];
    g.head.conv.bias.as_mut().unwrap().value = Tensor::new(&[3], b.to_vec());
    let mut tape = Tape::no_grad();
    let y = {
        let mut fwd = Fwd::new(&mut tape, Mode::Train);
        g.forward(&mut fwd, &latent(2, 4, Some(vec![1, 2]), 3), 3).unwrap()
    };
    let out = tape.value(y);
    for (i, &v) in out.data().iter().enumerate() {
        let c = (i / 64) % 3;
        assert!((v - b[c].tanh()).abs() < 1e-15, "{v}");
    }
}

#[test]
fn latent_condition_dims() {
    let mut r = rng(4);
    let mut e = hvg::layers::Embedding::new(4, 128, false, &mut r).unwrap();
    let lat = latent(3, 128, Some(vec![0, 1, 2]), 5);
    let mut tape = Tape::no_grad();
    let mut fwd = Fwd::new(&mut tape, Mode::Frozen);
    let c = latent_condition(&mut fwd, Some(&mut e), &lat).unwrap();
    assert_eq!(fwd.tape.shape(c), &[3, 256]);
    let u = latent_condition(&mut fwd, None, &Latent { labels: None, ..lat.clone() }).unwrap();
    assert_eq!(fwd.tape.value(u), &lat.z);
    assert!(latent_condition(&mut fwd, Some(&mut e), &Latent { labels: None, ..lat }).is_err());
}

#[test]
fn labels_change_generator_gains() {
    let mut g = FirstLevelG::new(&tiny_first(), 4, &mut rng(6)).unwrap();
    let z = latent(1, 4, Some(vec![0]), 7);
    let run = |g: &mut FirstLevelG, y: usize| {
        let mut tape = Tape::no_grad();
        let l = Latent { labels: Some(vec![y]), ..z.clone() };
        let mut fwd = Fwd::new(&mut tape, Mode::Frozen);
        let c = latent_condition(&mut fwd, g.embed.as_mut(), &l).unwrap();
        let gain = g.head.bn.gain.forward(&mut fwd, c).unwrap();
        fwd.tape.value(gain).clone()
    };
    assert!(run(&mut g, 0).max_abs_diff(&run(&mut g, 1)) > 1e-6);
}

#[test]
fn upsampler_shapes() {
    let cfg = tiny_up();
    let mut g = UpsamplerG::new(&cfg, 4, &mut rng(8)).unwrap();
    assert_eq!(g.base_resolution, 4);
    // taps at resolutions 4, 8, 8 | 8, 16, 16 | 16, 16, 16 against an 8x8 condition
    let present: Vec<bool> = g.taps.iter().map(|t| t.is_some()).collect();
    assert_eq!(present, [true, true, true, true, false, false, false, false, false]);
    assert_eq!(g.temporal_convs(), Some(6));
    let mut tape = Tape::no_grad();
    let x = tape.constant(constant_video(2, 4, 3, 8));
    let mut fwd = Fwd::new(&mut tape, Mode::Train);
    let y = g.forward(&mut fwd, x, &latent(2, 4, Some(vec![0, 1]), 9)).unwrap();
    assert_eq!(fwd.tape.shape(y), &[2, 8, 3, 16, 16]);
    assert!(fwd.tape.value(y).data().iter().all(|v| v.abs() <= 1.0));
    let bad = fwd.tape.constant(constant_video(2, 4, 3, 16));
    assert!(matches!(g.forward(&mut fwd, bad, &latent(2, 4, Some(vec![0, 1]), 9)), Err(HvgError::Shape(_))));
}

#[test]
fn grounding_path_isolation() {
    let mut cfg = tiny_up();
    cfg.multipliers = vec![1, 1, 1];
    cfg.ch = 4;
    let mut g = UpsamplerG::new(&cfg, 4, &mut rng(10)).unwrap();
    zero_all(&mut g);
    // the last tap at condition resolution: unit 1, temporal layer (8x8)
    let tap = g.taps[3].as_mut().expect("tap at 8x8");
    let mut w = Tensor::zeros(&[4, 3, 1, 1, 1]);
    for c in 0..3 {
        w.set(&[c, c, 0, 0, 0], 1.0);
    }
    tap.weight.value = w;
    tap.sn = None;
    let cond = constant_video(1, 3, 3, 8);
    let mut tape = Tape::no_grad();
    let x = tape.constant(cond.clone());
    let (f, _) = {
        let mut fwd = Fwd::new(&mut tape, Mode::Train);
        g.features(&mut fwd, x, &latent(1, 4, Some(vec![2]), 11)).unwrap()
    };
    let feat = tape.value(f);
    assert_eq!(feat.shape(), &[1, 6, 4, 16, 16]);
    let rep = replicate_frames(&VideoTensor::new(cond).unwrap(), 2).unwrap();
    let want = nearest_resize(&nearest_resize(&rep, 8, 8).unwrap(), 16, 16).unwrap();
    assert_eq!(feat.narrow(2, 0, 3), want.tensor().clone());
    assert!(feat.narrow(2, 3, 1).data().iter().all(|&v| v == 0.0));
}

/// Upsampler with per-frame statistics for `frames` high-rate timesteps.
fn frozen_upsampler(seed: u64, high_frames: usize) -> UpsamplerG {
    let mut g = UpsamplerG::new(&tiny_up(), 4, &mut rng(seed)).unwrap();
    let mut tape = Tape::no_grad();
    let x = tape.constant(pseudo_random(&[3, high_frames / 2, 3, 8, 8], 12));
    let mut fwd = Fwd::new(&mut tape, Mode::Recompute { pass: 0 });
    g.forward(&mut fwd, x, &latent(3, 4, Some(vec![0, 1, 2]), 13)).unwrap();
    g
}

fn frozen_run(g: &mut UpsamplerG, cond: &Tensor, lat: &Latent, offset: usize) -> Tensor {
    let mut tape = Tape::no_grad();
    let x = tape.constant(cond.clone());
    let mut fwd = Fwd::with_offset(&mut tape, Mode::Frozen, offset);
    let y = g.forward(&mut fwd, x, lat).unwrap();
    tape.value(y).clone()
}

#[test]
fn windowed_frames_match_full_inside_receptive_field() {
    let mut g = frozen_upsampler(14, 24);
    let cond = pseudo_random(&[1, 12, 3, 8, 8], 15);
    let lat = latent(1, 4, Some(vec![1]), 16);
    let full = frozen_run(&mut g, &cond, &lat, 0);
    let r = g.temporal_convs().unwrap();
    for (start, len) in [(2usize, 6usize), (5, 7), (0, 5), (6, 6)] {
        let win = frozen_run(&mut g, &cond.narrow(1, start, len), &lat, start * 2);
        let (lo, hi) = (start * 2, (start + len) * 2);
        for t in lo..hi {
            let left_ok = t >= lo + r || lo == 0;
            let right_ok = t + r < hi || hi == 24;
            let same = win.narrow(1, t - lo, 1) == full.narrow(1, t, 1);
            if left_ok && right_ok {
                assert!(same, "window {start}+{len}: frame {t} differs");
            }
        }
        // a missing margin is visible somewhere
        if start > 0 {
            assert_ne!(win.narrow(1, 0, 1), full.narrow(1, lo, 1));
        }
    }
}

#[test]
fn perturbation_stays_inside_receptive_field() {
    let mut g = frozen_upsampler(17, 24);
    let cond = pseudo_random(&[1, 12, 3, 8, 8], 18);
    let lat = latent(1, 4, Some(vec![0]), 19);
    let base = frozen_run(&mut g, &cond, &lat, 0);
    let mut pert = cond.clone();
    let f = 6;
    for i in 0..3 * 64 {
        pert.data_mut()[f * 192 + i] += 0.5;
    }
    let moved = frozen_run(&mut g, &pert, &lat, 0);
    for t in 0..24 {
        let (lo, hi) = g.condition_span(t, 12).unwrap();
        let changed = moved.narrow(1, t, 1) != base.narrow(1, t, 1);
        if !(lo..=hi).contains(&f) {
            assert!(!changed, "frame {t} changed although frame {f} is outside {lo}..={hi}");
        }
    }
    assert!(moved.narrow(1, 12, 1) != base.narrow(1, 12, 1));
}

#[test]
fn shifted_window_is_equivariant() {
    let mut g = frozen_upsampler(20, 24);
    let cond = pseudo_random(&[1, 12, 3, 8, 8], 21);
    let lat = latent(1, 4, Some(vec![3]), 22);
    // per-frame statistics are the same at every timestep after this
    g.for_each_stats(&mut |_, st| {
        for t in 1..st.timesteps() {
            st.mean[t] = st.mean[0].clone();
            st.var[t] = st.var[0].clone();
        }
    });
    let a = frozen_run(&mut g, &cond.narrow(1, 1, 5), &lat, 2);
    let b = frozen_run(&mut g, &cond.narrow(1, 4, 5), &lat, 8);
    let shifted = frozen_run(&mut g, &cond.narrow(1, 4, 5), &lat, 2);
    assert_eq!(b, shifted);
    let c = frozen_run(&mut g, &cond.narrow(1, 1, 5), &lat, 8);
    assert_eq!(a, c);
}

#[test]
fn generator_gradients() {
    let mut cfg = tiny_up();
    cfg.ch = 1;
    cfg.multipliers = vec![2, 1];
    cfg.resolution = 8;
    cfg.noise_dim = 2;
    cfg.embed_dim = 2;
    let mut g = UpsamplerG::new(&cfg, 2, &mut rng(23)).unwrap();
    let lat = latent(2, 2, Some(vec![0, 1]), 24);
    let err = module_grad_error(&mut g, &[pseudo_random(&[2, 2, 3, 4, 4], 25)], Mode::Recompute { pass: 0 }, &|g, fwd, v| {
        g.forward(fwd, v[0], &lat).unwrap()
    });
    assert!(err <= 1e-4, "upsampler gradient error {err}");

    let mut f = tiny_first();
    f.ch = 1;
    f.noise_dim = 2;
    f.embed_dim = 2;
    f.multipliers = vec![1, 1];
    let mut g = FirstLevelG::new(&f, 2, &mut rng(26)).unwrap();
    let err = module_grad_error(&mut g, &[], Mode::Recompute { pass: 0 }, &|g, fwd, _| g.forward(fwd, &lat, 2).unwrap());
    assert!(err <= 1e-4, "first-level gradient error {err}");
}

fn picks(b: usize, k: usize, offset: usize) -> Vec<Vec<usize>> {
    (0..b).map(|i| (0..k).map(|j| (j + i + offset) % k).collect()).collect()
}

#[test]
fn score_widths() {
    let mut first = tiny_first();
    first.spatial_frames = 8;
    first.frames = 8;
    let mut d = LevelDiscriminators::new(0, &first, 4, &mut rng(27)).unwrap();
    assert_eq!(d.width(), 9);
    let mut up = tiny_up();
    up.spatial_frames = 8;
    up.frames = 4;
    let mut du = LevelDiscriminators::new(1, &up, 4, &mut rng(28)).unwrap();
    assert_eq!(du.width(), 10);
    up.matching_d = false;
    assert_eq!(LevelDiscriminators::new(1, &up, 4, &mut rng(29)).unwrap().width(), 9);
    let mut single = tiny_first();
    single.spatial_frames = 1;
    assert_eq!(LevelDiscriminators::new(0, &single, 4, &mut rng(30)).unwrap().width(), 2);

    let mut tape = Tape::no_grad();
    let x = tape.constant(constant_video(2, 8, 3, 8));
    let hi = tape.constant(constant_video(2, 8, 3, 16));
    let lo = tape.constant(constant_video(2, 4, 3, 8));
    let mut fwd = Fwd::new(&mut tape, Mode::Frozen);
    let s = d.scores(&mut fwd, x, None, Some(&[0, 1]), &picks(2, 8, 0)).unwrap();
    assert_eq!(fwd.tape.shape(s), &[2, 9]);
    let s = du.scores(&mut fwd, hi, Some(lo), Some(&[0, 1]), &picks(2, 8, 0)).unwrap();
    assert_eq!(fwd.tape.shape(s), &[2, 10]);
    assert!(du.scores(&mut fwd, hi, None, Some(&[0, 1]), &picks(2, 8, 0)).is_err());
}

#[test]
fn zero_weight_discriminators_return_bias() {
    let cfg = tiny_up();
    let mut d = LevelDiscriminators::new(1, &cfg, 4, &mut rng(31)).unwrap();
    zero_all(&mut d);
    d.spatial.out.bias.value = Tensor::new(&[1], vec![0.25]);
    d.temporal.out.bias.value = Tensor::new(&[1], vec![-1.5]);
    d.matching.as_mut().unwrap().stack.out.bias.value = Tensor::new(&[1], vec![2.0]);
    let mut tape = Tape::no_grad();
    let hi = tape.constant(constant_video(2, 6, 3, 16));
    let lo = tape.constant(constant_video(2, 3, 3, 8).map(|v| -v));
    let mut fwd = Fwd::new(&mut tape, Mode::Frozen);
    let s = d.scores(&mut fwd, hi, Some(lo), Some(&[1, 2]), &picks(2, 2, 1)).unwrap();
    assert_eq!(fwd.tape.value(s).data(), &[0.25, 0.25, -1.5, 2.0, 0.25, 0.25, -1.5, 2.0]);
}

#[test]
fn spatial_scores_are_permutation_invariant() {
    let mut cfg = tiny_first();
    cfg.spatial_frames = 4;
    let mut d = SpatialD::new(&cfg, 4, &mut rng(32)).unwrap();
    let mut tape = Tape::no_grad();
    let x = tape.constant(pseudo_random(&[1, 5, 3, 8, 8], 33));
    let mut fwd = Fwd::new(&mut tape, Mode::Frozen);
    let a = d.forward(&mut fwd, x, Some(&[2]), &[vec![0, 2, 3, 4]]).unwrap();
    let b = d.forward(&mut fwd, x, Some(&[2]), &[vec![4, 0, 3, 2]]).unwrap();
    let (a, b) = (fwd.tape.value(a).data().to_vec(), fwd.tape.value(b).data().to_vec());
    assert_eq!([a[0], a[1], a[2], a[3]], [b[1], b[3], b[2], b[0]]);

    let picks = d.sample_frames(3, 5, &mut rng(34)).unwrap();
    for p in &picks {
        let mut q = p.clone();
        q.sort();
        q.dedup();
        assert_eq!(q.len(), 4);
    }
    let all = SpatialD::new(&LevelConfig { spatial_frames: 5, ..cfg.clone() }, 4, &mut rng(35)).unwrap();
    let mut p = all.sample_frames(1, 5, &mut rng(36)).unwrap().remove(0);
    p.sort();
    assert_eq!(p, vec![0, 1, 2, 3, 4]);
    assert!(d.sample_frames(1, 3, &mut rng(37)).is_err());
}

#[test]
fn matching_pairs() {
    let cfg = tiny_up();
    let mut m = MatchingD::new(&cfg, 4, &mut rng(38)).unwrap();
    assert_eq!(m.stack.blocks[0].in_ch, 6);
    let hi_v = VideoTensor::new(pseudo_random(&[1, 6, 3, 16, 16], 39)).unwrap();
    let lo_v = hvg::video::spatial_downsample(&hvg::video::temporal_subsample(&hi_v, 2, 0).unwrap(), 2).unwrap();
    let mut tape = Tape::no_grad();
    let hi = tape.constant(hi_v.tensor().clone());
    let lo = tape.constant(lo_v.tensor().clone());
    let mut fwd = Fwd::new(&mut tape, Mode::Frozen);
    let r = m.reduce(&mut fwd, hi).unwrap();
    assert_eq!(fwd.tape.value(r), lo_v.tensor());
    let s = m.forward(&mut fwd, hi, lo, Some(&[0])).unwrap();
    assert_eq!(fwd.tape.shape(s), &[1, 1]);
    assert!(matches!(m.forward(&mut fwd, lo, hi, Some(&[0])), Err(HvgError::Shape(_))));
    let other = fwd.tape.constant(constant_video(1, 3, 3, 8));
    let s2 = m.forward(&mut fwd, hi, other, Some(&[0])).unwrap();
    assert_ne!(fwd.tape.value(s), fwd.tape.value(s2));
}

#[test]
fn discriminators_have_no_normalization_and_bounded_weights() {
    let mut d = LevelDiscriminators::new(1, &tiny_up(), 4, &mut rng(40)).unwrap();
    assert_eq!(d.stats_count(), 0);
    let mut checked = 0;
    let mut weights: Vec<(String, Tensor)> = Vec::new();
    d.for_each_param(&mut |n, p| {
        if n.ends_with("weight") || n.ends_with("table") {
            weights.push((n.to_string(), p.value.clone()));
        }
    });
    let mut states: Vec<(Tensor, Tensor)> = Vec::new();
    let mut collect = |n: &str, s: Slot<'_>| {
        if let Slot::Buffer(b) = s {
            if n.ends_with(".u") {
                states.push((b.clone(), Tensor::zeros(&[0])));
            } else if let Some(last) = states.last_mut() {
                last.1 = b.clone();
            }
        }
    };
    d.visit(&mut Visitor::new(&mut collect));
    assert_eq!(states.len(), weights.len(), "every weight carries a power-iteration state");
    for ((name, w), (u, v)) in weights.iter().zip(&states) {
        let mut st = hvg::layers::SpectralState { u: u.clone(), v: v.clone(), iterations: 1 };
        for _ in 0..50 {
            st.power_iterate(w);
        }
        let (wn, _) = hvg::layers::spectral_normalize(w, &mut st);
        let (r, c) = hvg::layers::matrix_dims(w.shape());
        let top = DMatrix::from_row_slice(r, c, wn.data()).singular_values().max();
        assert!(top <= 1.0 + 1e-3, "{name}: {top}");
        checked += 1;
    }
    assert!(checked > 10);
}

fn sn_weight(w: &Tensor, u: &Tensor, v: &Tensor) -> Tensor {
    let st = hvg::layers::SpectralState { u: u.clone(), v: v.clone(), iterations: 0 };
    w.scale(1.0 / st.sigma(w))
}

#[test]
fn temporal_d_matches_loop_oracle() {
    let mut cfg = tiny_first();
    cfg.d_multipliers = vec![1];
    cfg.d_ch = 2;
    cfg.class_conditional = false;
    cfg.resolution = 4;
    let mut d = TemporalD::new(&cfg, 4, &mut rng(41)).unwrap();
    let x = pseudo_random(&[2, 3, 3, 4, 4], 42);
    let mut tape = Tape::no_grad();
    let xv = tape.constant(x.clone());
    let s = {
        let mut fwd = Fwd::new(&mut tape, Mode::Frozen);
        d.forward(&mut fwd, xv, None).unwrap()
    };
    let b = &d.blocks[0];
    let w1 = sn_weight(&b.conv1.weight.value, &b.conv1.sn.as_ref().unwrap().state.u, &b.conv1.sn.as_ref().unwrap().state.v);
    let w2 = sn_weight(&b.conv2.weight.value, &b.conv2.sn.as_ref().unwrap().state.u, &b.conv2.sn.as_ref().unwrap().state.v);
    let sc = b.shortcut.as_ref().unwrap();
    let ws = sn_weight(&sc.weight.value, &sc.sn.as_ref().unwrap().state.u, &sc.sn.as_ref().unwrap().state.v);
    // 2x2 box mean
    let mut p = Tensor::zeros(&[2, 3, 3, 2, 2]);
    for n in 0..2 {
        for t in 0..3 {
            for c in 0..3 {
                for y in 0..2 {
                    for xx in 0..2 {
                        let mut acc = 0.0;
                        for a in 0..2 {
                            for bb in 0..2 {
                                acc += x.at(&[n, t, c, 2 * y + a, 2 * xx + bb]);
                            }
                        }
                        p.set(&[n, t, c, y, xx], acc / 4.0);
                    }
                }
            }
        }
    }
    let h = naive_conv(&p, &w1, b.conv1.bias.as_ref().map(|b| &b.value)).map(|v| v.max(0.0));
    let h = naive_conv(&h, &w2, b.conv2.bias.as_ref().map(|b| &b.value));
    let s_path = naive_conv(&p, &ws, sc.bias.as_ref().map(|b| &b.value));
    let feat = h.add(&s_path).map(|v| v.max(0.0));
    let wo = sn_weight(&d.out.weight.value, &d.out.sn.as_ref().unwrap().state.u, &d.out.sn.as_ref().unwrap().state.v);
    for n in 0..2 {
        let mut score = d.out.bias.value.data()[0];
        for c in 0..2 {
            let mut pooled = 0.0;
            for t in 0..3 {
                for y in 0..2 {
                    for xx in 0..2 {
                        pooled += feat.at(&[n, t, c, y, xx]);
                    }
                }
            }
            score += wo.at(&[0, c]) * pooled;
        }
        let got = tape.value(s).at(&[n, 0]);
        assert!((got - score).abs() < 1e-10, "{got} vs {score}");
    }
}

#[test]
fn discriminator_gradients() {
    let mut cfg = tiny_up();
    cfg.d_ch = 1;
    cfg.d_multipliers = vec![1, 2];
    cfg.resolution = 4;
    cfg.spatial_frames = 2;
    let mut d = LevelDiscriminators::new(1, &cfg, 2, &mut rng(43)).unwrap();
    let pk = picks(1, 2, 0);
    let err = module_grad_error(
        &mut d,
        &[pseudo_random(&[1, 4, 3, 4, 4], 44), pseudo_random(&[1, 2, 3, 2, 2], 45)],
        Mode::Frozen,
        &|d, fwd, v: &[Var]| d.scores(fwd, v[0], Some(v[1]), Some(&[1]), &pk).unwrap(),
    );
    assert!(err <= 1e-4, "discriminator gradient error {err}");
}
