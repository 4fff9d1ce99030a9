//! Feature-enhanced attention: a channel gate followed by a spatial gate,
//! both applied multiplicatively.
//!
//! The channel gate pools each plane by average and by max, passes both
//! descriptors through one shared two-layer MLP (ReLU in between), sums and
//! squashes with a sigmoid. The spatial gate reduces across channels by
//! average and by max, stacks the two maps, convolves with a `ks x ks`
//! kernel and squashes with a sigmoid.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Graph, PoolKind, Tensor, Var};

pub const DEFAULT_REDUCTION: usize = 4;
pub const DEFAULT_KERNEL_SIZE: usize = 7;

/// Learnable parameters of one attention module.
#[derive(Clone, Debug, PartialEq)]
pub struct FeamParams {
    /// `(c/r, c, 1, 1)`
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    /// `(c, c/r, 1, 1)`
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
    /// `(1, 2, ks, ks)`; input channel 0 is the average map, 1 the max map.
    pub spatial_kernel: Tensor,
    pub spatial_bias: Tensor,
}

/// Validated `(channels, hidden, kernel_size)`.
pub fn feam_dims(channels: usize, reduction: usize, kernel_size: usize) -> Result<(usize, usize)> {
    if reduction == 0 || channels == 0 || channels % reduction != 0 {
        return Err(Error::Config(format!(
            "attention reduction {reduction} must divide channel count {channels}"
        )));
    }
    if kernel_size % 2 == 0 {
        return Err(Error::Config(format!(
            "attention kernel size {kernel_size} must be odd"
        )));
    }
    Ok((channels / reduction, kernel_size))
}

impl FeamParams {
    pub fn zeros(channels: usize, reduction: usize, kernel_size: usize) -> Result<Self> {
        let (hidden, ks) = feam_dims(channels, reduction, kernel_size)?;
        Ok(FeamParams {
            mlp_w1: Tensor::zeros([hidden, channels, 1, 1]),
            mlp_b1: Tensor::zeros([1, hidden, 1, 1]),
            mlp_w2: Tensor::zeros([channels, hidden, 1, 1]),
            mlp_b2: Tensor::zeros([1, channels, 1, 1]),
            spatial_kernel: Tensor::zeros([1, 2, ks, ks]),
            spatial_bias: Tensor::zeros([1, 1, 1, 1]),
        })
    }

    /// Fan-in scaled uniform weights, zero biases.
    pub fn random<R: Rng + ?Sized>(
        channels: usize,
        reduction: usize,
        kernel_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (hidden, ks) = feam_dims(channels, reduction, kernel_size)?;
        let mut p = Self::zeros(channels, reduction, kernel_size)?;
        p.mlp_w1 = Tensor::uniform([hidden, channels, 1, 1], fan_in_bound(channels), rng);
        p.mlp_w2 = Tensor::uniform([channels, hidden, 1, 1], fan_in_bound(hidden), rng);
        p.spatial_kernel = Tensor::uniform([1, 2, ks, ks], fan_in_bound(2 * ks * ks), rng);
        Ok(p)
    }

    pub fn channels(&self) -> usize {
        self.mlp_w1.shape().c
    }

    pub fn kernel_size(&self) -> usize {
        self.spatial_kernel.shape().h
    }

    pub fn tensors(&self) -> [&Tensor; 6] {
        [
            &self.mlp_w1,
            &self.mlp_b1,
            &self.mlp_w2,
            &self.mlp_b2,
            &self.spatial_kernel,
            &self.spatial_bias,
        ]
    }

    pub fn register(&self, g: &mut Graph) -> FeamVars {
        let [w1, b1, w2, b2, sk, sb] = self.tensors().map(|t| g.param(t.clone()));
        FeamVars {
            mlp_w1: w1,
            mlp_b1: b1,
            mlp_w2: w2,
            mlp_b2: b2,
            spatial_kernel: sk,
            spatial_bias: sb,
        }
    }
}

pub(crate) fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

/// Graph handles of a [`FeamParams`].
#[derive(Clone, Copy, Debug)]
pub struct FeamVars {
    pub mlp_w1: Var,
    pub mlp_b1: Var,
    pub mlp_w2: Var,
    pub mlp_b2: Var,
    pub spatial_kernel: Var,
    pub spatial_bias: Var,
}

impl FeamVars {
    pub fn from_slice(v: &[Var]) -> Self {
        FeamVars {
            mlp_w1: v[0],
            mlp_b1: v[1],
            mlp_w2: v[2],
            mlp_b2: v[3],
            spatial_kernel: v[4],
            spatial_bias: v[5],
        }
    }
}

fn shared_mlp(g: &mut Graph, descriptor: Var, p: &FeamVars) -> Result<Var> {
    let h = g.dense(descriptor, p.mlp_w1, Some(p.mlp_b1))?;
    let h = g.relu(h);
    g.dense(h, p.mlp_w2, Some(p.mlp_b2))
}

/// Per-channel gates in `(0, 1)`, shape `(n, c, 1, 1)`.
pub fn channel_attention(g: &mut Graph, x: Var, p: &FeamVars) -> Result<Var> {
    let c = g.shape(x).c;
    let expected = g.shape(p.mlp_w1).c;
    if c != expected {
        return Err(Error::shape(
            "channel_attention",
            format!("input has {c} channels, module was built for {expected}"),
        ));
    }
    let avg = g.global_pool(x, PoolKind::Avg);
    let max = g.global_pool(x, PoolKind::Max);
    let a = shared_mlp(g, avg, p)?;
    let m = shared_mlp(g, max, p)?;
    let s = g.add(a, m)?;
    Ok(g.sigmoid(s))
}

/// Per-pixel gates in `(0, 1)`, shape `(n, 1, h, w)`.
pub fn spatial_attention(g: &mut Graph, x: Var, p: &FeamVars) -> Result<Var> {
    let ks = g.shape(p.spatial_kernel).h;
    let avg = g.channel_reduce(x, PoolKind::Avg);
    let max = g.channel_reduce(x, PoolKind::Max);
    let stacked = g.concat_channels(&[avg, max])?;
    let spec = ConvSpec::new(2, 1, ks).padding(ks / 2).bias(true);
    let logits = g.conv2d(stacked, p.spatial_kernel, Some(p.spatial_bias), spec)?;
    Ok(g.sigmoid(logits))
}

/// Channel gate, then spatial gate on the channel-refined features.
pub fn apply(g: &mut Graph, x: Var, p: &FeamVars) -> Result<Var> {
    let cw = channel_attention(g, x, p)?;
    let y = g.mul(x, cw)?;
    let sw = spatial_attention(g, y, p)?;
    g.mul(y, sw)
}

/// Forward-only evaluation on plain tensors.
pub fn feam_apply(x: &Tensor, p: &FeamParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let vars = p.register(&mut g);
    let y = apply(&mut g, xv, &vars)?;
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gates(x: &Tensor, p: &FeamParams) -> (Tensor, Tensor) {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let vars = p.register(&mut g);
        let c = channel_attention(&mut g, xv, &vars).unwrap();
        let s = spatial_attention(&mut g, xv, &vars).unwrap();
        (g.value(c).clone(), g.value(s).clone())
    }

    #[test]
    fn zero_params_quarter_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform([2, 4, 3, 5], 2.0, &mut rng);
        let p = FeamParams::zeros(4, 2, 3).unwrap();
        let (c, s) = gates(&x, &p);
        assert!(c.data().iter().chain(s.data()).all(|&v| v == 0.5));
        let y = feam_apply(&x, &p).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 0.25 * b);
        }
        let zero = feam_apply(&Tensor::zeros([1, 4, 3, 3]), &p).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_channels_get_identical_gates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plane = Tensor::uniform([1, 1, 4, 4], 1.0, &mut rng);
        let x = Tensor::stack(&[&plane; 4])
            .unwrap()
            .reshape([1, 4, 4, 4])
            .unwrap();
        // A symmetric MLP (same weights for every channel) keeps the channels exchangeable.
        let mut p = FeamParams::zeros(4, 4, 3).unwrap();
        p.mlp_w1 = Tensor::full([1, 4, 1, 1], 0.3);
        p.mlp_w2 = Tensor::full([4, 1, 1, 1], -0.7);
        let (c, _) = gates(&x, &p);
        assert!(c.data().windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn spatially_constant_input_gives_constant_interior() {
        let x = Tensor::full([1, 3, 9, 9], 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = FeamParams::random(3, 3, 3, &mut rng).unwrap();
        let (_, s) = gates(&x, &p);
        // Zero padding breaks translation symmetry only at the border ring.
        let centre = s.at(0, 0, 4, 4);
        for y in 1..8 {
            for x in 1..8 {
                assert!((s.at(0, 0, y, x) - centre).abs() < 1e-15);
            }
        }
        let (_, s) = gates(&x, &FeamParams::zeros(3, 3, 1).unwrap());
        assert!(s.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(FeamParams::zeros(6, 4, 3).is_err());
        assert!(FeamParams::zeros(8, 4, 4).is_err());
        let p = FeamParams::zeros(8, 4, 3).unwrap();
        let x = Tensor::zeros([1, 4, 2, 2]);
        assert!(feam_apply(&x, &p).is_err());
    }
}
