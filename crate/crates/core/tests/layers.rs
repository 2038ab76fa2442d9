mod common;

use common::{module_grad_error, naive_conv, pseudo_random};
use hvg::layers::{
    CondBatchNorm, Conv, ConvGru, Embedding, Fwd, Linear, Mode, Module, ResBlockD, ResBlockG, SepConv3d, Slot,
    Visitor,
};
use hvg_tensor::{Tape, Tensor, Var};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn run<M: Module>(m: &mut M, mode: Mode, inputs: &[Tensor], f: impl Fn(&mut M, &mut Fwd<'_>, &[Var]) -> Var) -> Tensor {
    let mut tape = Tape::no_grad();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = {
        let mut fwd = Fwd::new(&mut tape, mode);
        f(m, &mut fwd, &vars)
    };
    tape.value(out).clone()
}

fn strip_sn(c: &mut Conv) {
    c.sn = None;
}

#[test]
fn conv_linear_embedding_gradients() {
    let mode = Mode::Recompute { pass: 0 };
    let mut c2 = Conv::conv2d(2, 3, 3, true, &mut rng(1)).unwrap();
    let e = module_grad_error(&mut c2, &[pseudo_random(&[1, 2, 2, 3, 3], 1)], mode, &|m, f, x| {
        m.forward(f, x[0]).unwrap()
    });
    assert!(e < TOL, "conv2d {e}");

    let mut c3 = Conv::conv3d(2, 2, 3, true, &mut rng(2)).unwrap();
    let e = module_grad_error(&mut c3, &[pseudo_random(&[1, 3, 2, 3, 3], 2)], mode, &|m, f, x| {
        m.forward(f, x[0]).unwrap()
    });
    assert!(e < TOL, "conv3d {e}");

    let mut lin = Linear::new(4, 3, true, &mut rng(3)).unwrap();
    let e = module_grad_error(&mut lin, &[pseudo_random(&[2, 4], 3)], mode, &|m, f, x| m.forward(f, x[0]).unwrap());
    assert!(e < TOL, "linear {e}");

    let mut emb = Embedding::new(4, 3, true, &mut rng(4)).unwrap();
    let e = module_grad_error(&mut emb, &[], mode, &|m, f, _| m.forward(f, &[1, 3, 1]).unwrap());
    assert!(e < TOL, "embedding {e}");
    let mut emb = Embedding::new(4, 3, true, &mut rng(4)).unwrap();
    let mut tape = Tape::no_grad();
    assert!(emb.forward(&mut Fwd::new(&mut tape, Mode::Frozen), &[4]).is_err());
}

#[test]
fn cond_batchnorm_gradients_and_normalization() {
    let mut bn = CondBatchNorm::new(3, 2, &mut rng(5)).unwrap();
    let x = pseudo_random(&[2, 2, 3, 2, 2], 5).map(|v| 3.0 * v + 1.5);
    let c = pseudo_random(&[2, 2], 6);
    let e = module_grad_error(&mut bn, &[x.clone(), c.clone()], Mode::Recompute { pass: 0 }, &|m, f, v| {
        m.forward(f, v[0], v[1]).unwrap()
    });
    assert!(e < TOL, "cbn batch-stat {e}");

    run(&mut bn, Mode::Train, &[x.clone(), c.clone()], |m, f, v| m.forward(f, v[0], v[1]).unwrap());
    let e = module_grad_error(&mut bn, &[x.clone(), c], Mode::Frozen, &|m, f, v| m.forward(f, v[0], v[1]).unwrap());
    assert!(e < TOL, "cbn frozen {e}");

    // normalised activations before the affine map
    let mut bn = CondBatchNorm::new(2, 2, &mut rng(6)).unwrap();
    let x = pseudo_random(&[4, 3, 2, 5, 5], 7).map(|v| 10.0 * v - 4.0);
    let y = run(&mut bn, Mode::Train, &[x], |m, f, v| m.normalize(f, v[0]).unwrap());
    for t in 0..3 {
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| (0..25).map(move |p| (b, p)))
                .map(|(b, p)| y.at(&[b, t, ch, p / 5, p % 5]))
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() <= 1e-5, "mean {m}");
            assert!((var - 1.0).abs() <= 1e-4, "var {var}");
        }
    }
}

#[test]
fn cond_batchnorm_labels_change_gains() {
    let mut r = rng(8);
    let mut emb = Embedding::new(3, 4, false, &mut r).unwrap();
    let mut bn = CondBatchNorm::new(2, 6, &mut r).unwrap();
    let z = pseudo_random(&[1, 2], 9);
    let x = pseudo_random(&[1, 1, 2, 2, 2], 10);
    let out = |label: usize, emb: &mut Embedding, bn: &mut CondBatchNorm| {
        let mut tape = Tape::no_grad();
        let mut fwd = Fwd::new(&mut tape, Mode::Recompute { pass: 0 });
        let e = emb.forward(&mut fwd, &[label]).unwrap();
        let zv = fwd.tape.constant(z.clone());
        let c = fwd.tape.concat(&[e, zv], 1);
        let g = bn.gain.forward(&mut fwd, c).unwrap();
        let xv = fwd.tape.constant(x.clone());
        let _ = bn.forward(&mut fwd, xv, c).unwrap();
        fwd.tape.value(g).clone()
    };
    let a = out(0, &mut emb, &mut bn);
    let b = out(2, &mut emb, &mut bn);
    assert!(a.max_abs_diff(&b) > 1e-6);
}

#[test]
fn conv_gru_gate_arithmetic() {
    let mut gru = ConvGru::new(2, 3, &mut rng(11)).unwrap();
    for c in [&mut gru.reset, &mut gru.update, &mut gru.candidate] {
        c.zero();
    }
    let h = pseudo_random(&[1, 1, 3, 3, 3], 12);
    let x = pseudo_random(&[1, 1, 2, 3, 3], 13);
    let out = run(&mut gru, Mode::Frozen, &[h.clone(), x.clone()], |m, f, v| m.step(f, v[0], v[1]).unwrap());
    assert!(out.max_abs_diff(&h.scale(0.5)) < 1e-15);

    gru.update.bias.as_mut().unwrap().value = Tensor::full(&[3], -1e3);
    let out = run(&mut gru, Mode::Frozen, &[h.clone(), x], |m, f, v| m.step(f, v[0], v[1]).unwrap());
    assert_eq!(out, h);
}

#[test]
fn conv_gru_matches_scalar_oracle() {
    let mut gru = ConvGru::new(1, 2, &mut rng(14)).unwrap();
    for c in [&mut gru.reset, &mut gru.update, &mut gru.candidate] {
        strip_sn(c);
        c.bias.as_mut().unwrap().value = pseudo_random(&[2], 15);
    }
    let x = pseudo_random(&[1, 3, 1, 3, 4], 16);
    let out = run(&mut gru, Mode::Frozen, &[x.clone()], |m, f, v| m.forward(f, v[0]).unwrap());

    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut h = Tensor::zeros(&[1, 1, 2, 3, 4]);
    for t in 0..3 {
        let xt = x.narrow(1, t, 1);
        let xh = Tensor::concat(&[&xt, &h], 2);
        let r = naive_conv(&xh, &gru.reset.weight.value, gru.reset.bias.as_ref().map(|b| &b.value)).map(sig);
        let z = naive_conv(&xh, &gru.update.weight.value, gru.update.bias.as_ref().map(|b| &b.value)).map(sig);
        let rh = r.mul(&h);
        let xrh = Tensor::concat(&[&xt, &rh], 2);
        let cand = naive_conv(&xrh, &gru.candidate.weight.value, gru.candidate.bias.as_ref().map(|b| &b.value))
            .map(|v| v.max(0.0));
        let mut next = h.clone();
        for i in 0..next.numel() {
            let (zi, hi, ci) = (z.data()[i], h.data()[i], cand.data()[i]);
            next.data_mut()[i] = (1.0 - zi) * hi + zi * ci;
        }
        h = next;
        assert!(out.narrow(1, t, 1).max_abs_diff(&h) < 1e-12, "step {t}");
    }

    let mut gru = ConvGru::new(2, 2, &mut rng(17)).unwrap();
    let e = module_grad_error(&mut gru, &[pseudo_random(&[1, 2, 2, 3, 3], 18)], Mode::Recompute { pass: 0 }, &|m, f, v| {
        m.forward(f, v[0]).unwrap()
    });
    assert!(e < TOL, "conv gru {e}");

    let mut tape = Tape::no_grad();
    let h = tape.constant(Tensor::zeros(&[1, 1, 3, 3, 3]));
    let x = tape.constant(Tensor::zeros(&[1, 1, 2, 3, 3]));
    assert!(gru.step(&mut Fwd::new(&mut tape, Mode::Frozen), h, x).is_err());
}

#[test]
fn separable_conv3d_cases() {
    let mut sep = SepConv3d::new(1, 1, &mut rng(19)).unwrap();
    strip_sn(&mut sep.temporal);
    strip_sn(&mut sep.spatial);
    sep.temporal.zero();
    sep.spatial.zero();
    sep.temporal.weight.value = Tensor::new(&[1, 1, 3, 1, 1], vec![0.0, 1.0, 0.0]);
    let mut id = Tensor::zeros(&[1, 1, 1, 3, 3]);
    id.set(&[0, 0, 0, 1, 1], 1.0);
    sep.spatial.weight.value = id;
    let x = pseudo_random(&[2, 4, 1, 4, 4], 20);
    assert_eq!(run(&mut sep, Mode::Frozen, &[x.clone()], |m, f, v| m.forward(f, v[0]).unwrap()), x);

    // constant input: interior frames and pixels scale by s_t · s_s
    sep.temporal.weight.value = Tensor::new(&[1, 1, 3, 1, 1], vec![0.5, 1.0, 0.25]);
    sep.spatial.weight.value = Tensor::from_fn(&[1, 1, 1, 3, 3], |i| 0.1 * i as f64);
    let (st, ss) = (1.75, 3.6);
    let out = run(&mut sep, Mode::Frozen, &[Tensor::full(&[1, 5, 1, 5, 5], 2.0)], |m, f, v| m.forward(f, v[0]).unwrap());
    for t in 1..4 {
        for y in 1..4 {
            for xx in 1..4 {
                assert!((out.at(&[0, t, 0, y, xx]) - 2.0 * st * ss).abs() < 1e-12);
            }
        }
    }

    let mut sep = SepConv3d::new(2, 3, &mut rng(21)).unwrap();
    strip_sn(&mut sep.temporal);
    strip_sn(&mut sep.spatial);
    sep.temporal.bias.as_mut().unwrap().value = pseudo_random(&[3], 22);
    let x = pseudo_random(&[1, 2, 2, 4, 4], 23);
    let out = run(&mut sep, Mode::Frozen, &[x.clone()], |m, f, v| m.forward(f, v[0]).unwrap());
    let mid = naive_conv(&x, &sep.temporal.weight.value, sep.temporal.bias.as_ref().map(|b| &b.value));
    let want = naive_conv(&mid, &sep.spatial.weight.value, sep.spatial.bias.as_ref().map(|b| &b.value));
    assert!(out.max_abs_diff(&want) < 1e-12);

    let mut sep = SepConv3d::new(2, 2, &mut rng(24)).unwrap();
    let e = module_grad_error(&mut sep, &[pseudo_random(&[1, 3, 2, 3, 3], 25)], Mode::Recompute { pass: 0 }, &|m, f, v| {
        m.forward(f, v[0]).unwrap()
    });
    assert!(e < TOL, "separable {e}");
}

fn zero_block_g(b: &mut ResBlockG) {
    let mut f = |name: &str, s: Slot<'_>| {
        if let Slot::Param(p) = s {
            if name.starts_with("conv") {
                p.value = Tensor::zeros(p.value.shape());
            }
        }
    };
    b.visit(&mut Visitor::new(&mut f));
}

#[test]
fn generator_block_cases() {
    let cond = pseudo_random(&[1, 3], 26);
    let mut b = ResBlockG::new_2d(4, 4, 3, false, &mut rng(27)).unwrap();
    zero_block_g(&mut b);
    let x = pseudo_random(&[1, 2, 4, 3, 3], 28);
    let out = run(&mut b, Mode::Recompute { pass: 0 }, &[x.clone(), cond.clone()], |m, f, v| {
        m.forward(f, v[0], v[1]).unwrap()
    });
    assert_eq!(out, x);

    let mut b = ResBlockG::new_2d(4, 4, 3, false, &mut rng(29)).unwrap();
    let e = module_grad_error(&mut b, &[x.clone(), cond.clone()], Mode::Recompute { pass: 0 }, &|m, f, v| {
        m.forward(f, v[0], v[1]).unwrap()
    });
    assert!(e < TOL, "resblock2d {e}");

    let mut up = ResBlockG::new_2d(3, 2, 3, true, &mut rng(30)).unwrap();
    let x = pseudo_random(&[2, 2, 3, 2, 2], 31);
    let c2 = pseudo_random(&[2, 3], 32);
    let out = run(&mut up, Mode::Recompute { pass: 0 }, &[x.clone(), c2.clone()], |m, f, v| {
        m.forward(f, v[0], v[1]).unwrap()
    });
    assert_eq!(out.shape(), &[2, 2, 2, 4, 4]);
    let e = module_grad_error(&mut up, &[x, c2], Mode::Recompute { pass: 0 }, &|m, f, v| m.forward(f, v[0], v[1]).unwrap());
    assert!(e < TOL, "resblock2d upsample {e}");

    let mut sep = ResBlockG::new_separable(2, 2, 3, &mut rng(33)).unwrap();
    assert_eq!(sep.temporal_convs(), 2);
    let x = pseudo_random(&[2, 3, 2, 2, 2], 34);
    let c2 = pseudo_random(&[2, 3], 35);
    let e = module_grad_error(&mut sep, &[x, c2], Mode::Recompute { pass: 0 }, &|m, f, v| m.forward(f, v[0], v[1]).unwrap());
    assert!(e < TOL, "separable block {e}");
}

#[test]
fn discriminator_block_cases() {
    let mut b = ResBlockD::new(2, 2, true, false, true, &mut rng(36)).unwrap();
    let x = pseudo_random(&[1, 2, 2, 4, 4], 37);
    let out = run(&mut b, Mode::Frozen, &[x.clone()], |m, f, v| m.forward(f, v[0]).unwrap());
    assert_eq!(out.shape(), &[1, 2, 2, 2, 2]);
    let e = module_grad_error(&mut b, &[x.clone()], Mode::Recompute { pass: 0 }, &|m, f, v| m.forward(f, v[0]).unwrap());
    assert!(e < TOL, "resblock_disc {e}");

    b.conv1.zero();
    b.conv2.zero();
    let out = run(&mut b, Mode::Frozen, &[x.clone()], |m, f, v| m.forward(f, v[0]).unwrap());
    assert_eq!(out, x.avg_pool(2));

    let mut b3 = ResBlockD::new(2, 3, false, true, true, &mut rng(38)).unwrap();
    for c in [&mut b3.conv1, &mut b3.conv2, b3.shortcut.as_mut().unwrap()] {
        strip_sn(c);
    }
    let x = pseudo_random(&[1, 4, 2, 3, 3], 39);
    let out = run(&mut b3, Mode::Frozen, &[x.clone()], |m, f, v| m.forward(f, v[0]).unwrap());
    let bias = |c: &Conv| c.bias.as_ref().map(|b| b.value.clone());
    let h = naive_conv(&x.map(|v| v.max(0.0)), &b3.conv1.weight.value, bias(&b3.conv1).as_ref()).map(|v| v.max(0.0));
    let h = naive_conv(&h, &b3.conv2.weight.value, bias(&b3.conv2).as_ref());
    let sc = b3.shortcut.as_ref().unwrap();
    let s = naive_conv(&x, &sc.weight.value, bias(sc).as_ref());
    assert!(out.max_abs_diff(&h.add(&s)) < 1e-12);

    let mut b3 = ResBlockD::new(2, 2, true, true, false, &mut rng(40)).unwrap();
    let e = module_grad_error(&mut b3, &[pseudo_random(&[1, 3, 2, 4, 4], 41)], Mode::Recompute { pass: 0 }, &|m, f, v| {
        m.forward(f, v[0]).unwrap()
    });
    assert!(e < TOL, "resblock_disc 3d {e}");
}

#[test]
fn trained_spectral_norm_bounds_layer_weights() {
    let mut c = Conv::conv2d(3, 5, 3, true, &mut rng(42)).unwrap();
    c.weight.value = pseudo_random(c.weight.value.shape(), 43).scale(3.0);
    let x = pseudo_random(&[1, 1, 3, 3, 3], 44);
    for _ in 0..50 {
        run(&mut c, Mode::Train, &[x.clone()], |m, f, v| m.forward(f, v[0]).unwrap());
    }
    let sigma = c.sn.as_ref().unwrap().state.sigma(&c.weight.value);
    let normalized = c.weight.value.scale(1.0 / sigma);
    let top = DMatrix::from_row_slice(5, 27, normalized.data()).singular_values().max();
    assert!((1.0 - 1e-3..=1.0 + 1e-3).contains(&top), "top {top}");
}
