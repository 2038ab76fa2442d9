#![allow(dead_code)]

use hvg::layers::{Fwd, Mode, Module};
use hvg_tensor::{Tape, Tensor, Var};

/// Direct nested-loop same-padded convolution on `[N,T,C,H,W]` with
/// weights `[O,C,kt,kh,kw]` and bias `[O]`.
pub fn naive_conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (n, t, c, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(4));
    let (o, kt, kh, kw) = (w.dim(0), w.dim(2), w.dim(3), w.dim(4));
    let (pt, ph, pw) = (kt as isize / 2, kh as isize / 2, kw as isize / 2);
    let mut out = Tensor::zeros(&[n, t, o, h, wd]);
    for ni in 0..n {
        for ti in 0..t {
            for oi in 0..o {
                for yi in 0..h {
                    for xi in 0..wd {
                        let mut s = b.map(|b| b.data()[oi]).unwrap_or(0.0);
                        for ci in 0..c {
                            for a in 0..kt {
                                for p in 0..kh {
                                    for q in 0..kw {
                                        let tt = ti as isize + a as isize - pt;
                                        let yy = yi as isize + p as isize - ph;
                                        let xx = xi as isize + q as isize - pw;
                                        if tt < 0 || yy < 0 || xx < 0 || tt >= t as isize || yy >= h as isize || xx >= wd as isize {
                                            continue;
                                        }
                                        s += w.at(&[oi, ci, a, p, q])
                                            * x.at(&[ni, tt as usize, ci, yy as usize, xx as usize]);
                                    }
                                }
                            }
                        }
                        out.set(&[ni, ti, oi, yi, xi], s);
                    }
                }
            }
        }
    }
    out
}

pub fn pseudo_random(shape: &[usize], seed: u64) -> Tensor {
    Tensor::from_fn(shape, |i| {
        let mut z = (i as u64).wrapping_add(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    })
}

/// Gradients that vanish identically (a bias feeding a batch norm) leave
/// only finite-difference rounding noise, so both norms below `1e-6`
/// count as agreement.
fn rel(a: &Tensor, n: &Tensor) -> f64 {
    let scale = a.norm() + n.norm();
    if scale < 1e-6 {
        return 0.0;
    }
    a.sub(n).norm() / scale
}

/// Worst norm-wise relative error between analytic and central-difference
/// gradients of `Σ f(m, inputs) ⊙ R` (fixed random `R`), over every input
/// and every parameter of `m`.
pub fn module_grad_error<M: Module>(
    m: &mut M,
    inputs: &[Tensor],
    mode: Mode,
    f: &dyn Fn(&mut M, &mut Fwd<'_>, &[Var]) -> Var,
) -> f64 {
    let eps = 1e-6;
    let loss_of = |m: &mut M, tape: &mut Tape, vars: &[Var]| -> Var {
        let out = {
            let mut fwd = Fwd::new(tape, mode);
            f(m, &mut fwd, vars)
        };
        let r = tape.constant(pseudo_random(tape.shape(out), 99));
        let p = tape.mul(out, r);
        tape.sum_all(p)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = loss_of(m, &mut tape, &vars);
    let grads = tape.backward(loss);

    let eval = |m: &mut M, xs: &[Tensor]| -> f64 {
        let mut t = Tape::no_grad();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let l = loss_of(m, &mut t, &vs);
        t.value(l).item()
    };

    let mut worst: f64 = 0.0;
    let mut xs = inputs.to_vec();
    for k in 0..inputs.len() {
        let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let mut numeric = Tensor::zeros(inputs[k].shape());
        for i in 0..inputs[k].numel() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + eps;
            let up = eval(m, &xs);
            xs[k].data_mut()[i] = orig - eps;
            let down = eval(m, &xs);
            xs[k].data_mut()[i] = orig;
            numeric.data_mut()[i] = (up - down) / (2.0 * eps);
        }
        worst = worst.max(rel(&analytic, &numeric));
    }

    let ids = m.param_ids();
    let shapes: Vec<Vec<usize>> = m.param_values().into_iter().map(|(_, t)| t.shape().to_vec()).collect();
    for (pi, id) in ids.iter().enumerate() {
        let analytic = grads.param_by_id(*id).cloned().unwrap_or_else(|| Tensor::zeros(&shapes[pi]));
        let mut numeric = Tensor::zeros(&shapes[pi]);
        for i in 0..numeric.numel() {
            let mut orig = 0.0;
            set_param(m, pi, |v| {
                orig = v.data()[i];
                v.data_mut()[i] = orig + eps;
            });
            let up = eval(m, &xs);
            set_param(m, pi, |v| v.data_mut()[i] = orig - eps);
            let down = eval(m, &xs);
            set_param(m, pi, |v| v.data_mut()[i] = orig);
            numeric.data_mut()[i] = (up - down) / (2.0 * eps);
        }
        worst = worst.max(rel(&analytic, &numeric));
    }
    worst
}

fn set_param<M: Module>(m: &mut M, index: usize, mut g: impl FnMut(&mut Tensor)) {
    let mut k = 0;
    m.for_each_param(&mut |_, p| {
        if k == index {
            g(&mut p.value);
        }
        k += 1;
    });
}

/// Two-level experiment small enough to train for a few steps in a test:
/// 4 coarse frames at 8×8, refined to 8 frames at 16×16 from 3-frame windows.
pub fn tiny_experiment() -> hvg::config::ExperimentConfig {
    use hvg::config::{LevelConfig, TemporalUnit};
    let first = LevelConfig {
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
    };
    let up = LevelConfig {
        temporal_factor: 2,
        spatial_factor: 2,
        frames: 3,
        resolution: 16,
        multipliers: vec![2, 1, 1],
        temporal_unit: TemporalUnit::Separable3d,
        d_multipliers: vec![1, 2, 2],
        matching_d: true,
        ..first.clone()
    };
    let mut exp = hvg::config::preset("desk-2-level").unwrap();
    exp.name = "tiny".into();
    exp.levels = vec![first, up];
    exp.data.top_factor = (1, 1);
    exp.data.synthetic = hvg::data::SyntheticSpec { videos: 12, frames: 8, height: 16, width: 16, classes: 3, seed: 5 };
    exp.optimizer.batch_size = 2;
    exp.eval.stats_passes = 3;
    exp.eval.stats_batch = 2;
    exp.seed = 11;
    exp.validate().unwrap();
    exp
}
