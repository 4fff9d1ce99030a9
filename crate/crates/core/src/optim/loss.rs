use crate::error::{Error, Result};
use crate::tensor::{Graph, Shape, Tensor, Var};

/// Dice smoothing term. Small enough that a perfect binary prediction scores
/// below 1e-9 even on a single pixel.
pub const DEFAULT_DICE_EPS: f64 = 1e-10;
/// Probabilities are clamped here before taking logs.
pub const DEFAULT_LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub dice_weight: f64,
    pub ce_weight: f64,
    pub dice_eps: f64,
    pub log_floor: f64,
    /// Mass spread uniformly over all classes in the cross-entropy target.
    pub label_smoothing: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            dice_weight: 0.5,
            ce_weight: 0.5,
            dice_eps: DEFAULT_DICE_EPS,
            log_floor: DEFAULT_LOG_FLOOR,
            label_smoothing: 0.0,
        }
    }
}

/// One-hot volume `(n, classes, h, w)` from a row-major `(n, h, w)` label map.
pub fn one_hot(labels: &[u8], n: usize, classes: usize, h: usize, w: usize) -> Result<Tensor> {
    check_labels(labels, Shape::new(n, classes, h, w))?;
    let plane = h * w;
    let mut t = Tensor::zeros([n, classes, h, w]);
    let d = t.data_mut();
    for (i, &l) in labels.iter().enumerate() {
        let (b, p) = (i / plane, i % plane);
        d[(b * classes + l as usize) * plane + p] = 1.0;
    }
    Ok(t)
}

fn check_labels(labels: &[u8], s: Shape) -> Result<()> {
    if labels.len() != s.n * s.plane() {
        return Err(Error::shape(
            "labels",
            format!("{} labels for {} pixels of {s}", labels.len(), s.n * s.plane()),
        ));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= s.c) {
        return Err(Error::LabelOutOfRange {
            label: l as usize,
            classes: s.c,
        });
    }
    Ok(())
}

/// `1 - 2 sum(p g) / (sum(p^2) + sum(g^2) + eps)` per sample and class,
/// averaged over the classes present in that sample's target, then over the
/// batch.
pub fn dice_loss(g: &mut Graph, pred: Var, target: &Tensor, eps: f64) -> Result<Var> {
    let s = g.shape(pred);
    if target.shape() != s {
        return Err(Error::shape(
            "dice_loss",
            format!("prediction {s} vs target {}", target.shape()),
        ));
    }
    let p = g.value(pred).data();
    let t = target.data();
    let plane = s.plane();
    let batch = s.n as f64;
    let mut loss = 0.0;
    let mut dx = vec![0.0; p.len()];
    for n in 0..s.n {
        let mut terms = Vec::with_capacity(s.c);
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let (mut inter, mut pp, mut gg) = (0.0, 0.0, 0.0);
            for i in base..base + plane {
                inter += p[i] * t[i];
                pp += p[i] * p[i];
                gg += t[i] * t[i];
            }
            if gg > 0.0 {
                terms.push((base, inter, pp + gg + eps));
            }
        }
        if terms.is_empty() {
            return Err(Error::shape("dice_loss", format!("target of sample {n} has no positive entries")));
        }
        let scale = 1.0 / (terms.len() as f64 * batch);
        let sum: f64 = terms.iter().map(|&(_, inter, denom)| 1.0 - 2.0 * inter / denom).sum();
        loss += sum / terms.len() as f64;
        for (base, inter, denom) in terms {
            for i in base..base + plane {
                dx[i] = scale * (-2.0 * t[i] / denom + 4.0 * inter * p[i] / (denom * denom));
            }
        }
    }
    Ok(g.fused_scalar(pred, loss / batch, dx))
}

/// `-(1 / (n h w)) sum over pixels of sum_c q_c ln max(p_c, floor)` where `q`
/// is the one-hot label, optionally smoothed toward uniform.
pub fn soft_cross_entropy(
    g: &mut Graph,
    pred: Var,
    labels: &[u8],
    log_floor: f64,
    label_smoothing: f64,
) -> Result<Var> {
    let s = g.shape(pred);
    check_labels(labels, s)?;
    if !(0.0..1.0).contains(&label_smoothing) {
        return Err(Error::Config(format!(
            "label smoothing {label_smoothing} outside [0, 1)"
        )));
    }
    let p = g.value(pred).data();
    let plane = s.plane();
    let pixels = (s.n * plane) as f64;
    let uniform = label_smoothing / s.c as f64;
    let mut total = 0.0;
    let mut dx = vec![0.0; p.len()];
    for (i, &l) in labels.iter().enumerate() {
        let (b, px) = (i / plane, i % plane);
        for c in 0..s.c {
            let q = uniform + if c == l as usize { 1.0 - label_smoothing } else { 0.0 };
            if q == 0.0 {
                continue;
            }
            let j = (b * s.c + c) * plane + px;
            if p[j] > log_floor {
                total -= q * p[j].ln();
                dx[j] = -q / (p[j] * pixels);
            } else {
                total -= q * log_floor.ln();
            }
        }
    }
    Ok(g.fused_scalar(pred, total / pixels, dx))
}

/// Loss nodes of one batch.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub dice: Var,
    pub cross_entropy: Var,
}

/// Weighted sum of dice and cross-entropy on a probability volume.
pub fn combined_loss(g: &mut Graph, pred: Var, labels: &[u8], cfg: &LossConfig) -> Result<LossParts> {
    let s = g.shape(pred);
    let target = one_hot(labels, s.n, s.c, s.h, s.w)?;
    let dice = dice_loss(g, pred, &target, cfg.dice_eps)?;
    let ce = soft_cross_entropy(g, pred, labels, cfg.log_floor, cfg.label_smoothing)?;
    let a = g.scale(dice, cfg.dice_weight);
    let b = g.scale(ce, cfg.ce_weight);
    let total = g.add(a, b)?;
    Ok(LossParts {
        total,
        dice,
        cross_entropy: ce,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dice_value(pred: Vec<f64>, target: Vec<f64>) -> f64 {
        let s = [1, 1, 1, pred.len()];
        let mut g = Graph::new();
        let p = g.param(Tensor::from_vec(s, pred).unwrap());
        let t = Tensor::from_vec(s, target).unwrap();
        let l = dice_loss(&mut g, p, &t, DEFAULT_DICE_EPS).unwrap();
        g.scalar(l)
    }

    #[test]
    fn dice_examples() {
        assert!(dice_value(vec![1.0, 0.0, 1.0], vec![1.0, 0.0, 1.0]) < 1e-9);
        assert_eq!(dice_value(vec![1.0, 0.0], vec![0.0, 1.0]), 1.0);
        assert!((dice_value(vec![0.5, 0.5], vec![1.0, 0.0]) - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::new();
        let p = g.param(Tensor::from_vec([1, 2, 1, 2], vec![0.8, 0.4, 0.2, 0.6]).unwrap());
        let l = soft_cross_entropy(&mut g, p, &[0, 1], DEFAULT_LOG_FLOOR, 0.0).unwrap();
        let expected = -(0.8f64.ln() + 0.6f64.ln()) / 2.0;
        assert!((g.scalar(l) - expected).abs() < 1e-15);

        let mut g = Graph::new();
        let p = g.param(Tensor::full([2, 9, 3, 3], 1.0 / 9.0));
        let labels: Vec<u8> = (0..18).map(|i| (i % 9) as u8).collect();
        let l = soft_cross_entropy(&mut g, p, &labels, DEFAULT_LOG_FLOOR, 0.0).unwrap();
        assert!((g.scalar(l) - 9f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_floor_and_range() {
        let mut g = Graph::new();
        let p = g.param(Tensor::from_vec([1, 2, 1, 1], vec![1.0, 0.0]).unwrap());
        let l = soft_cross_entropy(&mut g, p, &[1], 1e-12, 0.0).unwrap();
        assert!((g.scalar(l) + 1e-12f64.ln()).abs() < 1e-12);
        assert!(matches!(
            soft_cross_entropy(&mut g, p, &[2], 1e-12, 0.0),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn smoothing_spreads_mass() {
        let mut g = Graph::new();
        let p = g.param(Tensor::from_vec([1, 2, 1, 1], vec![0.7, 0.3]).unwrap());
        let l = soft_cross_entropy(&mut g, p, &[0], 1e-12, 0.2).unwrap();
        let expected = -(0.9 * 0.7f64.ln() + 0.1 * 0.3f64.ln());
        assert!((g.scalar(l) - expected).abs() < 1e-14);
    }

    #[test]
    fn combined_is_half_sum() {
        let mut g = Graph::new();
        let p = g.param(Tensor::from_vec([1, 2, 1, 2], vec![0.8, 0.4, 0.2, 0.6]).unwrap());
        let parts = combined_loss(&mut g, p, &[0, 1], &LossConfig::default()).unwrap();
        let (d, c) = (g.scalar(parts.dice), g.scalar(parts.cross_entropy));
        assert_eq!(g.scalar(parts.total), 0.5 * (d + c));
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let labels = [0u8, 2, 1, 1];
        let p = one_hot(&labels, 1, 3, 2, 2).unwrap();
        let mut g = Graph::new();
        let v = g.param(p);
        let parts = combined_loss(&mut g, v, &labels, &LossConfig::default()).unwrap();
        assert!(g.scalar(parts.total) < 1e-9);
    }

    #[test]
    fn one_hot_layout() {
        let t = one_hot(&[1, 0], 1, 2, 1, 2).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 1.0, 0.0]);
        assert!(one_hot(&[0], 1, 2, 1, 2).is_err());
    }
}
