use feanet::optim::{
    combined_loss, cosine_lr, dice_loss, one_hot, restart_steps, soft_cross_entropy, LossConfig, SgdConfig, SgdState,
    WarmRestarts,
};
use feanet::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per sample: mean over target-present classes of
/// `1 - 2 sum(pg) / (sum p^2 + sum g^2 + eps)`; then mean over samples.
fn dice_oracle(p: &Tensor, labels: &[u8], eps: f64) -> f64 {
    let s = p.shape();
    let mut total = 0.0;
    for n in 0..s.n {
        let mut terms = Vec::new();
        for c in 0..s.c {
            let (mut pg, mut pp, mut gg) = (0.0, 0.0, 0.0);
            for y in 0..s.h {
                for x in 0..s.w {
                    let pv = p.at(n, c, y, x);
                    let gv = if labels[(n * s.h + y) * s.w + x] as usize == c { 1.0 } else { 0.0 };
                    pg += pv * gv;
                    pp += pv * pv;
                    gg += gv * gv;
                }
            }
            if gg > 0.0 {
                terms.push(1.0 - 2.0 * pg / (pp + gg + eps));
            }
        }
        total += terms.iter().sum::<f64>() / terms.len() as f64;
    }
    total / s.n as f64
}

fn ce_oracle(p: &Tensor, labels: &[u8]) -> f64 {
    let s = p.shape();
    let mut total = 0.0;
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let l = labels[(n * s.h + y) * s.w + x] as usize;
                total -= p.at(n, l, y, x).max(1e-12).ln();
            }
        }
    }
    total / (s.n * s.h * s.w) as f64
}

#[test]
fn losses_match_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..30 {
        let (n, c, h, w) = (rng.random_range(1..4), rng.random_range(2..6), rng.random_range(1..6), rng.random_range(1..6));
        let logits = Tensor::uniform([n, c, h, w], 3.0, &mut rng);
        let labels: Vec<u8> = (0..n * h * w).map(|_| rng.random_range(0..c as u8)).collect();
        let mut g = Graph::new();
        let v = g.constant(logits);
        let p = g.softmax_channel(v);
        let probs = g.value(p).clone();
        let target = one_hot(&labels, n, c, h, w).unwrap();
        let d = dice_loss(&mut g, p, &target, 1e-10).unwrap();
        let ce = soft_cross_entropy(&mut g, p, &labels, 1e-12, 0.0).unwrap();
        let parts = combined_loss(&mut g, p, &labels, &LossConfig::default()).unwrap();
        let (d_o, ce_o) = (dice_oracle(&probs, &labels, 1e-10), ce_oracle(&probs, &labels));
        assert!((g.scalar(d) - d_o).abs() < 1e-12);
        assert!((g.scalar(ce) - ce_o).abs() < 1e-12);
        assert!((g.scalar(parts.total) - 0.5 * (d_o + ce_o)).abs() < 1e-12);
    }
}

#[test]
fn two_pixel_cross_entropy() {
    let p = Tensor::from_vec([1, 2, 1, 2], vec![0.8, 0.4, 0.2, 0.6]).unwrap();
    let mut g = Graph::new();
    let v = g.constant(p);
    let ce = soft_cross_entropy(&mut g, v, &[0, 1], 1e-12, 0.0).unwrap();
    let want = -(0.8f64.ln() + 0.6f64.ln()) / 2.0;
    assert!((g.scalar(ce) - want).abs() < 1e-15);
}

#[test]
fn dice_rejects_mismatched_shapes() {
    let mut g = Graph::new();
    let v = g.constant(Tensor::zeros([1, 2, 2, 2]));
    assert!(dice_loss(&mut g, v, &Tensor::zeros([1, 2, 2, 3]), 1e-10).is_err());
}

/// `v <- mu v + g + wd x; x <- x - lr v` on `f(x) = a/2 (x - b)^2`.
#[test]
fn sgd_follows_hand_recurrence_on_a_quadratic() {
    let (a, b) = (1.7, -0.4);
    let cfg = SgdConfig::default();
    let mut opt = SgdState::new(cfg, [1]);
    let mut x = vec![2.0];
    let (mut hx, mut hv) = (2.0f64, 0.0f64);
    let sched = WarmRestarts::new(cfg.lr_max, cfg.lr_min, cfg.t0, cfg.t_mult);
    for t in 0..3 {
        let grad = vec![a * (x[0] - b)];
        let lr = opt.step([(x.as_mut_slice(), Some(grad.as_slice()))]).unwrap();
        let hlr = sched.lr_at(t);
        hv = cfg.momentum * hv + a * (hx - b) + cfg.weight_decay * hx;
        hx -= hlr * hv;
        assert_eq!(lr, hlr);
        assert!((x[0] - hx).abs() < 1e-12);
    }
    assert_eq!(opt.steps(), 3);
}

#[test]
fn sgd_keeps_still_without_gradient_or_decay() {
    let cfg = SgdConfig {
        weight_decay: 0.0,
        ..SgdConfig::default()
    };
    let mut opt = SgdState::new(cfg, [3]);
    let mut x = vec![1.0, -2.0, 0.5];
    for _ in 0..5 {
        opt.step([(x.as_mut_slice(), Some(&[0.0, 0.0, 0.0][..]))]).unwrap();
    }
    assert_eq!(x, vec![1.0, -2.0, 0.5]);
}

#[test]
fn schedule_midpoint_and_restarts() {
    assert_eq!(cosine_lr(0.03, 1e-4, 0, 50), 0.03);
    assert_eq!(cosine_lr(0.03, 1e-4, 50, 50), 1e-4);
    assert!((cosine_lr(0.03, 1e-4, 25, 50) - (0.03 + 1e-4) / 2.0).abs() < 1e-15);
    assert_eq!(restart_steps(50, 2, 3), vec![50, 150, 350]);
    let s = WarmRestarts::new(0.03, 1e-4, 50, 2);
    for r in restart_steps(50, 2, 3) {
        assert_eq!(s.lr_at(r), 0.03);
        assert!(s.lr_at(r - 1) < 0.03);
    }
}
