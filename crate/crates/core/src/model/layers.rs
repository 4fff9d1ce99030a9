//! Building blocks. Each layer stores [`ParamId`]s into a shared
//! [`ParamStore`] and runs against a [`Ctx`] that maps those ids to graph
//! handles.

use rand::Rng;

use super::store::{ParamId, ParamStore, StatsId};
use crate::error::{Error, Result};
use crate::feam::{self, fan_in_bound, FeamParams, FeamVars};
use crate::tensor::{BatchStats, ConvSpec, Graph, Tensor, Var, DEFAULT_BN_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are collected for later update.
    Train,
    /// Running statistics.
    Eval,
}

/// One forward pass: the graph, the registered parameters and the batch-norm
/// statistics observed so far.
pub struct Ctx<'a> {
    pub g: &'a mut Graph,
    store: &'a ParamStore,
    vars: &'a [Var],
    mode: Mode,
    updates: Vec<(StatsId, BatchStats)>,
}

impl<'a> Ctx<'a> {
    /// `vars` must come from registering `store` in `g`.
    pub fn new(g: &'a mut Graph, store: &'a ParamStore, vars: &'a [Var], mode: Mode) -> Self {
        assert_eq!(store.len(), vars.len(), "parameter handles do not match the store");
        Ctx {
            g,
            store,
            vars,
            mode,
            updates: Vec::new(),
        }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Batch statistics observed in train mode, in layer order.
    pub fn into_updates(self) -> Vec<(StatsId, BatchStats)> {
        self.updates
    }
}

pub(crate) fn conv_weight<R: Rng + ?Sized>(spec: &ConvSpec, rng: &mut R) -> Tensor {
    let (kh, kw) = spec.kernel;
    Tensor::uniform(
        spec.weight_shape(),
        fan_in_bound(spec.in_channels * kh * kw),
        rng,
    )
}

/// Each output pixel of a transposed conv sees `kh kw / stride^2` taps per
/// input channel.
pub(crate) fn transposed_weight<R: Rng + ?Sized>(spec: &ConvSpec, rng: &mut R) -> Tensor {
    let (kh, kw) = spec.kernel;
    let taps = (kh * kw / (spec.stride * spec.stride)).max(1);
    Tensor::uniform(
        spec.transposed_weight_shape(),
        fan_in_bound(spec.in_channels * taps),
        rng,
    )
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub transposed: bool,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, spec: ConvSpec) -> Self {
        let weight = store.add(format!("{name}.weight"), conv_weight(&spec, rng));
        Self::finish(store, name, spec, weight, false)
    }

    pub fn transposed<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        spec: ConvSpec,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), transposed_weight(&spec, rng));
        Self::finish(store, name, spec, weight, true)
    }

    fn finish(store: &mut ParamStore, name: &str, spec: ConvSpec, weight: ParamId, transposed: bool) -> Self {
        let bias = spec
            .has_bias
            .then(|| store.add(format!("{name}.bias"), Tensor::zeros([1, spec.out_channels, 1, 1])));
        Conv {
            spec,
            weight,
            bias,
            transposed,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.var(self.weight);
        let b = self.bias.map(|b| ctx.var(b));
        if self.transposed {
            ctx.g.conv_transpose2d(x, w, b, self.spec)
        } else {
            ctx.g.conv2d(x, w, b, self.spec)
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: StatsId,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones([1, channels, 1, 1])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros([1, channels, 1, 1])),
            stats: store.add_stats(name, channels),
            eps: DEFAULT_BN_EPS,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (gamma, beta) = (ctx.var(self.gamma), ctx.var(self.beta));
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = ctx.g.batch_norm_train(x, gamma, beta, self.eps)?;
                ctx.updates.push((self.stats, stats));
                Ok(y)
            }
            Mode::Eval => {
                let rs = ctx.store.stats(self.stats);
                ctx.g.batch_norm_eval(x, gamma, beta, &rs.mean, &rs.var, self.eps)
            }
        }
    }
}

/// Bias-free convolution followed by batch norm and optionally ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        spec: ConvSpec,
        relu: bool,
    ) -> Self {
        let spec = spec.bias(false);
        ConvBn {
            conv: Conv::new(store, rng, &format!("{name}.conv"), spec),
            bn: BatchNorm::new(store, &format!("{name}.bn"), spec.out_channels),
            relu,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(if self.relu { ctx.g.relu(y) } else { y })
    }
}

fn conv3x3(cin: usize, cout: usize, stride: usize) -> ConvSpec {
    ConvSpec::new(cin, cout, 3).stride(stride).padding(1)
}

/// `relu(bn(conv(relu(bn(conv(x))))) + shortcut(x))`, with a 1x1 projection
/// shortcut whenever the shape changes.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub first: ConvBn,
    pub second: ConvBn,
    pub projection: Option<ConvBn>,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Self {
        let first = ConvBn::new(store, rng, &format!("{name}.conv1"), conv3x3(in_channels, out_channels, stride), true);
        let second = ConvBn::new(store, rng, &format!("{name}.conv2"), conv3x3(out_channels, out_channels, 1), false);
        let projection = (stride != 1 || in_channels != out_channels).then(|| {
            let spec = ConvSpec::new(in_channels, out_channels, 1).stride(stride);
            ConvBn::new(store, rng, &format!("{name}.proj"), spec, false)
        });
        ResidualBlock {
            first,
            second,
            projection,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.first.forward(ctx, x)?;
        let y = self.second.forward(ctx, y)?;
        let shortcut = match &self.projection {
            Some(p) => p.forward(ctx, x)?,
            None => x,
        };
        let s = ctx.g.add(y, shortcut)?;
        Ok(ctx.g.relu(s))
    }
}

/// Decoder refinement at constant shape: `x + bn(conv(relu(bn(conv(x)))))`.
#[derive(Clone, Debug)]
pub struct BlockA {
    pub first: ConvBn,
    pub second: ConvBn,
}

impl BlockA {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, channels: usize) -> Self {
        BlockA {
            first: ConvBn::new(store, rng, &format!("{name}.conv1"), conv3x3(channels, channels, 1), true),
            second: ConvBn::new(store, rng, &format!("{name}.conv2"), conv3x3(channels, channels, 1), false),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.first.forward(ctx, x)?;
        let y = self.second.forward(ctx, y)?;
        ctx.g.add(y, x)
    }
}

/// Decoder upsampling unit. Main path: 3x3 conv to the output width, BN,
/// ReLU, 2x2 stride-2 transposed conv. Branch: 2x2 stride-2 transposed conv
/// straight from the input. The sum goes through BN and ReLU.
#[derive(Clone, Debug)]
pub struct BlockB {
    pub reduce: ConvBn,
    pub up_main: Conv,
    pub up_branch: Conv,
    pub bn: BatchNorm,
    /// Off for the unit that emits logits unless the config asks for it.
    pub relu: bool,
}

fn up2x2(cin: usize, cout: usize) -> ConvSpec {
    ConvSpec::new(cin, cout, 2).stride(2)
}

impl BlockB {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        BlockB {
            reduce: ConvBn::new(store, rng, &format!("{name}.conv1"), conv3x3(in_channels, out_channels, 1), true),
            up_main: Conv::transposed(store, rng, &format!("{name}.trans1"), up2x2(out_channels, out_channels)),
            up_branch: Conv::transposed(store, rng, &format!("{name}.trans2"), up2x2(in_channels, out_channels)),
            bn: BatchNorm::new(store, &format!("{name}.bn"), out_channels),
            relu: true,
        }
    }

    /// The channel-halving form, `c -> c/2`.
    pub fn halving<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, channels: usize) -> Result<Self> {
        if channels % 2 != 0 || channels == 0 {
            return Err(Error::Config(format!(
                "channel-halving block needs an even channel count, got {channels}"
            )));
        }
        Ok(Self::new(store, rng, name, channels, channels / 2))
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let main = self.reduce.forward(ctx, x)?;
        let main = self.up_main.forward(ctx, main)?;
        let branch = self.up_branch.forward(ctx, x)?;
        let s = ctx.g.add(main, branch)?;
        let s = self.bn.forward(ctx, s)?;
        Ok(if self.relu { ctx.g.relu(s) } else { s })
    }
}

/// Attention module whose parameters live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Feam {
    pub ids: [ParamId; 6],
}

impl Feam {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        channels: usize,
        reduction: usize,
        kernel_size: usize,
    ) -> Result<Self> {
        let p = FeamParams::random(channels, reduction, kernel_size, rng)?;
        let names = ["mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "spatial_kernel", "spatial_bias"];
        let ids = std::array::from_fn(|i| store.add(format!("{name}.{}", names[i]), p.tensors()[i].clone()));
        Ok(Feam { ids })
    }

    pub fn params(&self, store: &ParamStore) -> FeamParams {
        let t = |i: usize| store.tensor(self.ids[i]).clone();
        FeamParams {
            mlp_w1: t(0),
            mlp_b1: t(1),
            mlp_w2: t(2),
            mlp_b2: t(3),
            spatial_kernel: t(4),
            spatial_bias: t(5),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let vars: Vec<Var> = self.ids.iter().map(|&id| ctx.var(id)).collect();
        feam::apply(ctx.g, x, &FeamVars::from_slice(&vars))
    }
}
