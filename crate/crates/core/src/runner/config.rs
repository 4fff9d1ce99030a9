use std::path::{Path, PathBuf};

use crate::data::GenerateConfig;
use crate::error::{Error, Result};
use crate::model::{kv_pairs, parse_num, ModelConfig, Variant};
use crate::optim::{LossConfig, SgdConfig};

/// Everything a run needs. Every field has a default, so an empty config
/// file drives the toy pipeline end to end.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub sgd: SgdConfig,
    pub loss: LossConfig,
    pub variant: Variant,
    pub epochs: usize,
    /// Stop after this many optimizer steps; 0 means no limit.
    pub max_steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_split: String,
    pub gen_count: usize,
    pub gen_min_objects: usize,
    pub gen_max_objects: usize,
    pub gen_night_fraction: f64,
    pub ablation_seeds: usize,
    pub bench_iters: usize,
    pub bench_warmup: usize,
    pub bench_h: usize,
    pub bench_w: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_root: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            model: ModelConfig::default(),
            sgd: SgdConfig::default(),
            loss: LossConfig::default(),
            variant: Variant::Frts,
            epochs: 20,
            max_steps: 0,
            batch_size: 5,
            seed: 0,
            eval_split: "test".into(),
            gen_count: 64,
            gen_min_objects: 2,
            gen_max_objects: 6,
            gen_night_fraction: 0.5,
            ablation_seeds: 3,
            bench_iters: 10,
            bench_warmup: 2,
            bench_h: 64,
            bench_w: 64,
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if ModelConfig::keys().contains(&key) {
            return self.model.set(key, value);
        }
        match key {
            "data_root" => self.data_root = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "variant" => self.variant = value.parse()?,
            "epochs" => self.epochs = parse_num(value)?,
            "max_steps" => self.max_steps = parse_num(value)?,
            "batch_size" => self.batch_size = parse_num(value)?,
            "seed" => self.seed = parse_num(value)?,
            "eval_split" => self.eval_split = value.to_string(),
            "lr_max" => self.sgd.lr_max = parse_num(value)?,
            "lr_min" => self.sgd.lr_min = parse_num(value)?,
            "momentum" => self.sgd.momentum = parse_num(value)?,
            "weight_decay" => self.sgd.weight_decay = parse_num(value)?,
            "t0" => self.sgd.t0 = parse_num(value)?,
            "t_mult" => self.sgd.t_mult = parse_num(value)?,
            "dice_weight" => self.loss.dice_weight = parse_num(value)?,
            "ce_weight" => self.loss.ce_weight = parse_num(value)?,
            "label_smoothing" => self.loss.label_smoothing = parse_num(value)?,
            "gen_count" => self.gen_count = parse_num(value)?,
            "gen_min_objects" => self.gen_min_objects = parse_num(value)?,
            "gen_max_objects" => self.gen_max_objects = parse_num(value)?,
            "gen_night_fraction" => self.gen_night_fraction = parse_num(value)?,
            "ablation_seeds" => self.ablation_seeds = parse_num(value)?,
            "bench_iters" => self.bench_iters = parse_num(value)?,
            "bench_warmup" => self.bench_warmup = parse_num(value)?,
            "bench_h" => self.bench_h = parse_num(value)?,
            "bench_w" => self.bench_w = parse_num(value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.sgd.t0 == 0 || self.sgd.t_mult == 0 {
            return Err(Error::Config("t0 and t_mult must be positive".into()));
        }
        if !(self.sgd.lr_min <= self.sgd.lr_max) {
            return Err(Error::Config("lr_min must not exceed lr_max".into()));
        }
        if self.ablation_seeds == 0 || self.bench_iters == 0 {
            return Err(Error::Config("ablation_seeds and bench_iters must be positive".into()));
        }
        Ok(())
    }

    /// Applies `key = value` text on top of the current values.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (k, v) in kv_pairs(text)? {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_kv(&text)?;
        Ok(cfg)
    }

    pub fn generate_config(&self) -> GenerateConfig {
        GenerateConfig {
            count: self.gen_count,
            height: self.model.input_h,
            width: self.model.input_w,
            min_objects: self.gen_min_objects,
            max_objects: self.gen_max_objects,
            num_classes: self.model.num_classes,
            night_fraction: self.gen_night_fraction,
            ratios: (0.5, 0.25, 0.25),
            seed: self.seed,
        }
    }
}
