use std::f64::consts::PI;

/// `lr_min + (lr_max - lr_min) (1 + cos(pi t_cur / t_i)) / 2`.
///
/// Evaluated as a convex combination so both endpoints are reproduced exactly.
pub fn cosine_lr(lr_max: f64, lr_min: f64, t_cur: u64, t_i: u64) -> f64 {
    let w = 0.5 * (1.0 + (PI * t_cur as f64 / t_i as f64).cos());
    w * lr_max + (1.0 - w) * lr_min
}

/// Cosine annealing with warm restarts, stepped once per optimizer update.
///
/// Cycle `i` lasts `t0 * t_mult^i` steps. The step at which a cycle would
/// reach `t_cur == t_i` is instead the first step of the next cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct WarmRestarts {
    pub lr_max: f64,
    pub lr_min: f64,
    pub t_mult: u64,
    t_cur: u64,
    t_i: u64,
}

impl WarmRestarts {
    pub fn new(lr_max: f64, lr_min: f64, t0: u64, t_mult: u64) -> Self {
        assert!(t0 > 0 && t_mult > 0, "cycle lengths must be positive");
        WarmRestarts {
            lr_max,
            lr_min,
            t_mult,
            t_cur: 0,
            t_i: t0,
        }
    }

    /// Places the schedule at an arbitrary phase of a cycle of length `t_i`.
    pub fn with_phase(mut self, t_cur: u64, t_i: u64) -> Self {
        assert!(t_i > 0 && t_cur <= t_i);
        self.t_cur = t_cur;
        self.t_i = t_i;
        self
    }

    pub fn phase(&self) -> (u64, u64) {
        (self.t_cur, self.t_i)
    }

    pub fn lr(&self) -> f64 {
        cosine_lr(self.lr_max, self.lr_min, self.t_cur, self.t_i)
    }

    pub fn step(&mut self) {
        self.t_cur += 1;
        if self.t_cur >= self.t_i {
            self.t_cur = 0;
            self.t_i *= self.t_mult;
        }
    }

    /// Learning rate `t` steps after the current one.
    pub fn lr_at(&self, t: u64) -> f64 {
        let mut s = self.clone();
        for _ in 0..t {
            s.step();
        }
        s.lr()
    }
}

/// The first `count` restart instants `t0, t0 + t0 m, ...`.
pub fn restart_steps(t0: u64, t_mult: u64, count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let (mut len, mut at) = (t0, 0);
    for _ in 0..count {
        at += len;
        out.push(at);
        len *= t_mult;
    }
    out
}
