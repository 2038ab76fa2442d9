use hvg_tensor::{Param, Tape, Tensor};

use super::norm::RunningStats;

/// How a forward pass treats normalization statistics and power-iteration
/// vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running stats and spectral vectors are updated.
    Train,
    /// Batch statistics; running stats are replaced by the cumulative mean
    /// over recompute passes (`pass` counts from 0). Spectral vectors stay.
    Recompute { pass: usize },
    /// Running statistics, nothing is updated. Also used for evaluation.
    Frozen,
}

/// Per-forward context threaded through every layer.
pub struct Fwd<'t> {
    pub tape: &'t mut Tape,
    pub mode: Mode,
    /// Absolute timestep of frame 0 of the current input, used to index
    /// per-frame normalization statistics.
    pub t_offset: usize,
}

impl<'t> Fwd<'t> {
    pub fn new(tape: &'t mut Tape, mode: Mode) -> Self {
        Self { tape, mode, t_offset: 0 }
    }

    pub fn with_offset(tape: &'t mut Tape, mode: Mode, t_offset: usize) -> Self {
        Self { tape, mode, t_offset }
    }
}

pub enum Slot<'a> {
    Param(&'a mut Param),
    /// Non-trainable tensor state (power-iteration vectors).
    Buffer(&'a mut Tensor),
    Stats(&'a mut RunningStats),
}

/// Walks the named state of a module tree. Names are `.`-joined paths.
pub struct Visitor<'f> {
    prefix: Vec<String>,
    f: &'f mut dyn FnMut(&str, Slot<'_>),
}

impl<'f> Visitor<'f> {
    pub fn new(f: &'f mut dyn FnMut(&str, Slot<'_>)) -> Self {
        Self { prefix: Vec::new(), f }
    }

    fn name(&self, leaf: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(leaf);
        s
    }

    pub fn param(&mut self, name: &str, p: &mut Param) {
        let n = self.name(name);
        (self.f)(&n, Slot::Param(p));
    }

    pub fn buffer(&mut self, name: &str, t: &mut Tensor) {
        let n = self.name(name);
        (self.f)(&n, Slot::Buffer(t));
    }

    pub fn stats(&mut self, name: &str, s: &mut RunningStats) {
        let n = self.name(name);
        (self.f)(&n, Slot::Stats(s));
    }

    pub fn child(&mut self, name: &str, m: &mut dyn Module) {
        self.prefix.push(name.to_string());
        m.visit(self);
        self.prefix.pop();
    }

    pub fn opt_child(&mut self, name: &str, m: Option<&mut dyn Module>) {
        if let Some(m) = m {
            self.child(name, m);
        }
    }

    pub fn list<M: Module>(&mut self, name: &str, ms: &mut [M]) {
        for (i, m) in ms.iter_mut().enumerate() {
            self.child(&format!("{name}{i}"), m);
        }
    }
}

pub trait Module {
    fn visit(&mut self, v: &mut Visitor<'_>);

    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        let mut g = |name: &str, s: Slot<'_>| {
            if let Slot::Param(p) = s {
                f(name, p)
            }
        };
        self.visit(&mut Visitor::new(&mut g));
    }

    fn for_each_stats(&mut self, f: &mut dyn FnMut(&str, &mut RunningStats)) {
        let mut g = |name: &str, s: Slot<'_>| {
            if let Slot::Stats(st) = s {
                f(name, st)
            }
        };
        self.visit(&mut Visitor::new(&mut g));
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, p| n += p.value.numel());
        n
    }

    /// Snapshot of every parameter value, in visit order.
    fn param_values(&mut self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.for_each_param(&mut |name, p| out.push((name.to_string(), p.value.clone())));
        out
    }

    fn param_ids(&mut self) -> Vec<u64> {
        let mut out = Vec::new();
        self.for_each_param(&mut |_, p| out.push(p.id()));
        out
    }

    fn stats_count(&mut self) -> usize {
        let mut n = 0;
        self.for_each_stats(&mut |_, _| n += 1);
        n
    }
}
