use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{FeamMask, ModelConfig, Variant};
use super::layers::{BlockA, BlockB, ConvBn, Ctx, Feam, Mode, ResidualBlock};
use super::store::{ParamStore, StatsId};
use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::tensor::{BatchStats, ConvSpec, Graph, Tensor, Var, DEFAULT_BN_MOMENTUM};

/// One modality's encoder: a stride-2 stem, then stride-2 residual stages,
/// each followed by an attention module.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub stem: ConvBn,
    pub stages: Vec<ResidualBlock>,
    /// `feams[0]` follows the stem, `feams[i]` follows `stages[i - 1]`.
    pub feams: Vec<Feam>,
}

impl Encoder {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, in_channels: usize, cfg: &ModelConfig) -> Result<Self> {
        let w = &cfg.stage_widths;
        let stem_spec = ConvSpec::new(in_channels, w[0], 3).stride(2).padding(1);
        let stem = ConvBn::new(store, rng, &format!("{name}.stem"), stem_spec, true);
        let mut feams = vec![Feam::new(store, rng, &format!("{name}.feam0"), w[0], cfg.feam_reduction, cfg.feam_kernel)?];
        let mut stages = Vec::new();
        for i in 1..w.len() {
            stages.push(ResidualBlock::new(store, rng, &format!("{name}.stage{i}"), w[i - 1], w[i], 2));
            feams.push(Feam::new(store, rng, &format!("{name}.feam{i}"), w[i], cfg.feam_reduction, cfg.feam_kernel)?);
        }
        Ok(Encoder { stem, stages, feams })
    }

    /// The backbone block of stage `i` (stage 0 is the stem).
    pub fn block(&self, ctx: &mut Ctx, stage: usize, x: Var) -> Result<Var> {
        if stage == 0 {
            self.stem.forward(ctx, x)
        } else {
            self.stages[stage - 1].forward(ctx, x)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub refine: BlockA,
    /// Upsampling units from the deepest width down to the class count.
    pub up: Vec<BlockB>,
}

impl Decoder {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let w = &cfg.stage_widths;
        let deepest = *w.last().expect("validated");
        let refine = BlockA::new(store, rng, "decoder.a", deepest);
        let mut outs: Vec<usize> = w.iter().rev().skip(1).copied().collect();
        outs.push(cfg.num_classes);
        let mut cin = deepest;
        let mut up = Vec::new();
        for (i, &cout) in outs.iter().enumerate() {
            up.push(BlockB::new(store, rng, &format!("decoder.b{i}"), cin, cout));
            cin = cout;
        }
        if let Some(last) = up.last_mut() {
            last.relu = cfg.logit_relu;
        }
        Decoder { refine, up }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut y = self.refine.forward(ctx, x)?;
        for b in &self.up {
            y = b.forward(ctx, y)?;
        }
        Ok(y)
    }
}

/// The two-stream segmentation network.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    variant: Variant,
    store: ParamStore,
    pub rgb: Encoder,
    pub thermal: Encoder,
    pub decoder: Decoder,
}

impl Model {
    /// Deterministic per `(config, seed)`. Attention parameters are created
    /// for every variant, so models that differ only in `variant` share all
    /// weights.
    pub fn build(config: ModelConfig, variant: Variant, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let rgb = Encoder::new(&mut store, &mut rng, "rgb", 3, &config)?;
        let thermal = Encoder::new(&mut store, &mut rng, "thermal", 1, &config)?;
        let decoder = Decoder::new(&mut store, &mut rng, &config);
        Ok(Model {
            config,
            variant,
            store,
            rgb,
            thermal,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn set_variant(&mut self, variant: Variant) {
        self.variant = variant;
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.store.register(g)
    }

    fn check_inputs(&self, g: &Graph, rgb: Var, thermal: Var) -> Result<()> {
        let (r, t) = (g.shape(rgb), g.shape(thermal));
        if r.c != 3 || t.c != 1 {
            return Err(Error::shape(
                "encode_fuse",
                format!("expected 3 RGB and 1 thermal channel, got c={} and c={}", r.c, t.c),
            ));
        }
        if (r.n, r.h, r.w) != (t.n, t.h, t.w) {
            return Err(Error::shape(
                "encode_fuse",
                format!("RGB {r} and thermal {t} disagree on n, h or w"),
            ));
        }
        let f = self.config.downsampling();
        if r.h % f != 0 || r.w % f != 0 {
            return Err(Error::shape(
                "encode_fuse",
                format!("spatial size {}x{} is not divisible by {f}", r.h, r.w),
            ));
        }
        Ok(())
    }

    /// Both encoders with per-stage attention and thermal-into-RGB fusion;
    /// returns the deepest fused map.
    pub fn encode_fuse(&self, ctx: &mut Ctx, rgb: Var, thermal: Var, mask: FeamMask) -> Result<Var> {
        self.check_inputs(ctx.g, rgb, thermal)?;
        let (mut r, mut t) = (rgb, thermal);
        for i in 0..self.config.stages() {
            t = self.thermal.block(ctx, i, t)?;
            if mask.thermal_at(i) {
                t = self.thermal.feams[i].forward(ctx, t)?;
            }
            r = self.rgb.block(ctx, i, r)?;
            if self.config.fuse_before_feam {
                r = ctx.g.add(r, t)?;
                if mask.rgb_at(i) {
                    r = self.rgb.feams[i].forward(ctx, r)?;
                }
            } else {
                if mask.rgb_at(i) {
                    r = self.rgb.feams[i].forward(ctx, r)?;
                }
                r = ctx.g.add(r, t)?;
            }
        }
        Ok(r)
    }

    /// Logits at input resolution for this model's variant.
    pub fn forward(&self, ctx: &mut Ctx, rgb: Var, thermal: Var) -> Result<Var> {
        self.forward_masked(ctx, rgb, thermal, self.variant.mask())
    }

    pub fn forward_masked(&self, ctx: &mut Ctx, rgb: Var, thermal: Var, mask: FeamMask) -> Result<Var> {
        let fused = self.encode_fuse(ctx, rgb, thermal, mask)?;
        self.decoder.forward(ctx, fused)
    }

    /// Eval-mode logits for plain tensors.
    pub fn infer(&self, rgb: &Tensor, thermal: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.store.register_frozen(&mut g);
        let r = g.constant(rgb.clone());
        let t = g.constant(thermal.clone());
        let mut ctx = Ctx::new(&mut g, &self.store, &vars, Mode::Eval);
        let y = self.forward(&mut ctx, r, t)?;
        Ok(g.value(y).clone())
    }

    pub fn predict_labels(&self, rgb: &Tensor, thermal: &Tensor) -> Result<Vec<LabelMap>> {
        Ok(argmax_labels(&self.infer(rgb, thermal)?))
    }

    /// Folds train-mode batch statistics into the running buffers.
    pub fn apply_updates(&mut self, updates: &[(StatsId, BatchStats)]) {
        for (id, stats) in updates {
            self.store.stats_mut(*id).update(stats, DEFAULT_BN_MOMENTUM);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.save(path)
    }

    pub fn load(config: ModelConfig, variant: Variant, path: &Path) -> Result<Self> {
        let mut m = Model::build(config, variant, 0)?;
        m.store.load(path)?;
        Ok(m)
    }
}

/// Per-pixel index of the largest channel, ties going to the lower index.
/// Softmax is monotone, so this is also the argmax of the probabilities.
pub fn argmax_labels(logits: &Tensor) -> Vec<LabelMap> {
    let s = logits.shape();
    let plane = s.plane();
    (0..s.n)
        .map(|n| {
            let item = logits.item(n);
            let labels = (0..plane)
                .map(|p| {
                    let mut best = 0;
                    for c in 1..s.c {
                        if item[c * plane + p] > item[best * plane + p] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMap::new(s.h, s.w, labels).expect("plane sized")
        })
        .collect()
}
