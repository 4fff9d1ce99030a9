use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::labels::LabelMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CLASS_NAMES: [&str; 9] = [
    "unlabeled",
    "car",
    "person",
    "bike",
    "curve",
    "car_stop",
    "guardrail",
    "color_cone",
    "bump",
];

/// Nominal surface color of each class; entry 0 tints the background.
const CLASS_RGB: [[f64; 3]; 9] = [
    [0.45, 0.45, 0.45],
    [0.80, 0.15, 0.15],
    [0.15, 0.35, 0.85],
    [0.20, 0.75, 0.25],
    [0.90, 0.85, 0.20],
    [0.70, 0.30, 0.80],
    [0.85, 0.85, 0.85],
    [0.95, 0.50, 0.05],
    [0.30, 0.20, 0.10],
];

/// Nominal thermal intensity of each class; entry 0 is the background level.
const CLASS_HEAT: [f64; 9] = [0.20, 0.70, 0.95, 0.55, 0.35, 0.60, 0.45, 0.80, 0.40];

pub const THERMAL_NOISE: f64 = 0.05;
pub const NIGHT_CONTRAST: f64 = 0.15;
const NIGHT_NOISE: f64 = 0.02;
const DAY_NOISE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Lighting {
    Day,
    Night,
}

impl fmt::Display for Lighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Lighting::Day => "day",
            Lighting::Night => "night",
        })
    }
}

impl FromStr for Lighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "day" => Ok(Lighting::Day),
            "night" => Ok(Lighting::Night),
            other => Err(Error::Config(format!("unknown lighting {other:?}"))),
        }
    }
}

/// What to draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub num_objects: usize,
    /// Classes including the background; objects use `1..num_classes`.
    pub num_classes: usize,
    pub lighting: Lighting,
}

impl SceneSpec {
    pub fn new(height: usize, width: usize, num_objects: usize, lighting: Lighting) -> Self {
        SceneSpec {
            height,
            width,
            num_objects,
            num_classes: CLASS_NAMES.len(),
            lighting,
        }
    }

    pub fn classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config(format!(
                "scene size {}x{} is below the 8x8 minimum",
                self.height, self.width
            )));
        }
        if self.num_objects > self.height * self.width / 64 {
            return Err(Error::Config(format!(
                "{} objects do not fit a {}x{} scene (at most one per 64 pixels)",
                self.num_objects, self.height, self.width
            )));
        }
        if !(2..=CLASS_NAMES.len()).contains(&self.num_classes) {
            return Err(Error::Config(format!(
                "scenes support 2..={} classes, got {}",
                CLASS_NAMES.len(),
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// One RGB-thermal sample with its label map. Rasters hold multiples of
/// 1/255 so they survive 8-bit storage unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePair {
    /// `(1, 3, h, w)` in `[0, 1]`.
    pub rgb: Tensor,
    /// `(1, 1, h, w)` in `[0, 1]`.
    pub thermal: Tensor,
    pub labels: LabelMap,
    pub seed: u64,
    pub lighting: Lighting,
}

#[derive(Clone, Copy)]
enum ShapeKind {
    Rect,
    Ellipse,
    HBar,
    VBar,
}

/// Shape and size range (fractions of the short side) for each class.
fn class_geometry(class: usize) -> (ShapeKind, f64, f64) {
    match class {
        1 => (ShapeKind::Rect, 0.25, 0.45),
        2 => (ShapeKind::Ellipse, 0.15, 0.30),
        3 => (ShapeKind::Ellipse, 0.12, 0.22),
        4 => (ShapeKind::HBar, 0.40, 0.80),
        5 => (ShapeKind::Rect, 0.10, 0.18),
        6 => (ShapeKind::HBar, 0.50, 0.95),
        7 => (ShapeKind::Rect, 0.06, 0.10),
        _ => (ShapeKind::VBar, 0.25, 0.50),
    }
}

struct Object {
    class: usize,
    kind: ShapeKind,
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Object {
    fn covers(&self, y: f64, x: f64) -> bool {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        match self.kind {
            ShapeKind::Ellipse => dy * dy + dx * dx <= 1.0,
            _ => dy.abs() <= 1.0 && dx.abs() <= 1.0,
        }
    }
}

fn place<R: Rng>(rng: &mut R, class: usize, h: usize, w: usize) -> Object {
    let (kind, lo, hi) = class_geometry(class);
    let short = h.min(w) as f64;
    let size = rng.random_range(lo..hi) * short;
    let (ry, rx) = match kind {
        ShapeKind::Rect => (size * rng.random_range(0.35..0.6), size * rng.random_range(0.4..0.7)),
        ShapeKind::Ellipse => (size * 0.6, size * 0.35),
        ShapeKind::HBar => (1.0, size * 0.5),
        ShapeKind::VBar => (size * 0.5, 1.0),
    };
    Object {
        class,
        kind,
        cy: rng.random_range(0.0..h as f64),
        cx: rng.random_range(0.0..w as f64),
        ry: ry.max(1.0),
        rx: rx.max(1.0),
    }
}

/// Smooth noise in `[0, 1)`: bilinear interpolation of a coarse random grid.
fn value_noise<R: Rng>(rng: &mut R, h: usize, w: usize, cell: usize) -> Vec<f64> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = y as f64 / cell as f64;
        let (y0, ty) = (fy as usize, fy.fract());
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let (x0, tx) = (fx as usize, fx.fract());
            let g = |yy: usize, xx: usize| grid[yy * gw + xx];
            let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
            let bottom = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

pub(crate) fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws a scene. Geometry, thermal and RGB use separate random streams, so
/// the labels and the thermal image of a seed do not depend on the lighting.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<ScenePair> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut geo = rng_for(seed, 0);
    let mut heat = rng_for(seed, 1);
    let mut vis = rng_for(seed, 2);

    let objects: Vec<Object> = (0..spec.num_objects)
        .map(|_| {
            let class = geo.random_range(1..spec.num_classes);
            place(&mut geo, class, h, w)
        })
        .collect();
    let mut labels = LabelMap::filled(h, w, 0);
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            if let Some(o) = objects.iter().rev().find(|o| o.covers(py, px)) {
                labels.set(y, x, o.class as u8);
            }
        }
    }

    let plane = h * w;
    let thermal_noise = Normal::new(0.0, THERMAL_NOISE).expect("valid sigma");
    let heat_texture = value_noise(&mut heat, h, w, 8);
    let thermal: Vec<f64> = (0..plane)
        .map(|i| {
            let c = labels.as_slice()[i] as usize;
            let base = CLASS_HEAT[c] + if c == 0 { 0.1 * (heat_texture[i] - 0.5) } else { 0.0 };
            quantize(base + thermal_noise.sample(&mut heat))
        })
        .collect();

    let coarse = value_noise(&mut vis, h, w, 6);
    let fine = value_noise(&mut vis, h, w, 2);
    let (contrast, sigma) = match spec.lighting {
        Lighting::Day => (1.0, DAY_NOISE),
        Lighting::Night => (NIGHT_CONTRAST, NIGHT_NOISE),
    };
    let rgb_noise = Normal::new(0.0, sigma).expect("valid sigma");
    let mut rgb = vec![0.0; 3 * plane];
    for i in 0..plane {
        let c = labels.as_slice()[i] as usize;
        let shade = 0.55 + 0.35 * coarse[i] + 0.4 * fine[i];
        for ch in 0..3 {
            let day = if c == 0 {
                CLASS_RGB[0][ch] * shade
            } else {
                CLASS_RGB[c][ch] * (0.85 + 0.3 * fine[i])
            };
            rgb[ch * plane + i] = quantize(contrast * day + rgb_noise.sample(&mut vis));
        }
    }

    Ok(ScenePair {
        rgb: Tensor::from_vec([1, 3, h, w], rgb)?,
        thermal: Tensor::from_vec([1, 1, h, w], thermal)?,
        labels,
        seed,
        lighting: spec.lighting,
    })
}

/// Mean absolute difference between horizontally and vertically adjacent
/// pixels, over all channels.
pub fn mean_gradient(t: &Tensor) -> f64 {
    let s = t.shape();
    let d = t.data();
    let mut total = 0.0;
    let mut count = 0usize;
    for plane in d.chunks(s.plane()) {
        for y in 0..s.h {
            for x in 0..s.w {
                let v = plane[y * s.w + x];
                if x + 1 < s.w {
                    total += (plane[y * s.w + x + 1] - v).abs();
                    count += 1;
                }
                if y + 1 < s.h {
                    total += (plane[(y + 1) * s.w + x] - v).abs();
                    count += 1;
                }
            }
        }
    }
    total / count.max(1) as f64
}
