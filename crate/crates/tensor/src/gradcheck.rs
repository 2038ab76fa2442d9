//! Central finite-difference checks for tape gradients.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Norm-wise relative error between analytic and central-difference
/// gradients of the scalar `f` at `inputs`, worst case over all inputs:
/// `‖g_a − g_n‖ / max(‖g_a‖ + ‖g_n‖, 1e-12)`.
pub fn relative_error<F>(f: F, inputs: &[Tensor], eps: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss);

    let eval = |pert: &[Tensor]| -> f64 {
        let mut t = Tape::no_grad();
        let vs: Vec<Var> = pert.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &vs);
        t.value(l).item()
    };

    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        let mut numeric = Tensor::zeros(x.shape());
        let mut pert: Vec<Tensor> = inputs.to_vec();
        for i in 0..x.numel() {
            let orig = x.data()[i];
            pert[k].data_mut()[i] = orig + eps;
            let up = eval(&pert);
            pert[k].data_mut()[i] = orig - eps;
            let down = eval(&pert);
            pert[k].data_mut()[i] = orig;
            numeric.data_mut()[i] = (up - down) / (2.0 * eps);
        }
        let diff = analytic.sub(&numeric).norm();
        let denom = (analytic.norm() + numeric.norm()).max(1e-12);
        worst = worst.max(diff / denom);
    }
    worst
}
