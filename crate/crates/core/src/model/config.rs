use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::feam::{feam_dims, DEFAULT_KERNEL_SIZE, DEFAULT_REDUCTION};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Output classes including the unlabeled class 0.
    pub num_classes: usize,
    /// Channels after each downsampling stage. Entry 0 is the stem width;
    /// every later entry is one stride-2 residual stage.
    pub stage_widths: Vec<usize>,
    pub input_h: usize,
    pub input_w: usize,
    pub feam_reduction: usize,
    pub feam_kernel: usize,
    /// Add the thermal features before the RGB attention instead of after it.
    pub fuse_before_feam: bool,
    /// Keep the BN-ReLU tail on the final decoder unit, which clamps the
    /// logits at zero.
    pub logit_relu: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 9,
            stage_widths: vec![16, 32, 64, 128, 256],
            input_h: 64,
            input_w: 64,
            feam_reduction: DEFAULT_REDUCTION,
            feam_kernel: DEFAULT_KERNEL_SIZE,
            fuse_before_feam: false,
            logit_relu: false,
        }
    }
}

pub(crate) fn parse_list(value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(s))
        .collect()
}

pub(crate) fn parse_num<T: FromStr>(value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {value:?} as a number")))
}

pub(crate) fn parse_bool(value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("expected true or false, got {other:?}"))),
    }
}

impl ModelConfig {
    pub fn stem_width(&self) -> usize {
        self.stage_widths[0]
    }

    /// Number of stride-2 stages, stem included.
    pub fn stages(&self) -> usize {
        self.stage_widths.len()
    }

    /// Spatial reduction factor of the encoder.
    pub fn downsampling(&self) -> usize {
        1 << self.stages()
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=256).contains(&self.num_classes) {
            return Err(Error::Config(format!(
                "num_classes must lie in 2..=256, got {}",
                self.num_classes
            )));
        }
        if self.stage_widths.is_empty() || self.stage_widths.len() > 16 {
            return Err(Error::Config("stage_widths needs 1 to 16 entries".into()));
        }
        if self.stage_widths.windows(2).any(|w| w[0] >= w[1]) || self.stage_widths[0] == 0 {
            return Err(Error::Config(format!(
                "stage_widths must be positive and strictly increasing, got {:?}",
                self.stage_widths
            )));
        }
        let f = self.downsampling();
        if self.input_h == 0 || self.input_w == 0 || self.input_h % f != 0 || self.input_w % f != 0 {
            return Err(Error::Config(format!(
                "input size {}x{} is not divisible by {f} (2^{} stages)",
                self.input_h,
                self.input_w,
                self.stages()
            )));
        }
        for &c in &self.stage_widths {
            feam_dims(c, self.feam_reduction, self.feam_kernel)?;
        }
        Ok(())
    }

    /// Sets one field from its `key = value` form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "num_classes" => self.num_classes = parse_num(value)?,
            "stage_widths" => self.stage_widths = parse_list(value)?,
            "input_h" => self.input_h = parse_num(value)?,
            "input_w" => self.input_w = parse_num(value)?,
            "feam_reduction" => self.feam_reduction = parse_num(value)?,
            "feam_kernel" => self.feam_kernel = parse_num(value)?,
            "fuse_before_feam" => self.fuse_before_feam = parse_bool(value)?,
            "logit_relu" => self.logit_relu = parse_bool(value)?,
            _ => return Err(Error::Config(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    pub fn keys() -> &'static [&'static str] {
        &[
            "num_classes",
            "stage_widths",
            "input_h",
            "input_w",
            "feam_reduction",
            "feam_kernel",
            "fuse_before_feam",
            "logit_relu",
        ]
    }

    pub fn to_kv(&self) -> String {
        let widths: Vec<String> = self.stage_widths.iter().map(|w| w.to_string()).collect();
        format!(
            "num_classes = {}\nstage_widths = {}\ninput_h = {}\ninput_w = {}\n\
             feam_reduction = {}\nfeam_kernel = {}\nfuse_before_feam = {}\nlogit_relu = {}\n",
            self.num_classes,
            widths.join(","),
            self.input_h,
            self.input_w,
            self.feam_reduction,
            self.feam_kernel,
            self.fuse_before_feam,
            self.logit_relu
        )
    }

    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (key, value) in kv_pairs(text)? {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splits `key = value` text into trimmed pairs, skipping blanks and comments.
pub fn kv_pairs(text: &str) -> Result<Vec<(&str, &str)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        out.push((k.trim(), v.trim()));
    }
    Ok(out)
}

/// Which streams keep their attention modules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Attention in both streams.
    Frts,
    /// No attention in the RGB stream.
    Nfrs,
    /// No attention in the thermal stream.
    Nfts,
    /// No attention anywhere.
    Nfrts,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Frts, Variant::Nfrs, Variant::Nfts, Variant::Nfrts];

    pub fn mask(self) -> FeamMask {
        let (rgb, thermal) = match self {
            Variant::Frts => (true, true),
            Variant::Nfrs => (false, true),
            Variant::Nfts => (true, false),
            Variant::Nfrts => (false, false),
        };
        FeamMask {
            rgb: if rgb { u32::MAX } else { 0 },
            thermal: if thermal { u32::MAX } else { 0 },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Frts => "FRTS",
            Variant::Nfrs => "NFRS",
            Variant::Nfts => "NFTS",
            Variant::Nfrts => "NFRTS",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (frts, nfrs, nfts, nfrts)")))
    }
}

/// Per-stage switches for the attention modules; bit `i` covers stage `i`.
/// A disabled module acts as the identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FeamMask {
    pub rgb: u32,
    pub thermal: u32,
}

impl FeamMask {
    pub fn rgb_at(&self, stage: usize) -> bool {
        self.rgb >> stage & 1 == 1
    }

    pub fn thermal_at(&self, stage: usize) -> bool {
        self.thermal >> stage & 1 == 1
    }
}
