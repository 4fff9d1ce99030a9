use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::eval::load_checkpoint;
use crate::error::Result;
use crate::model::Model;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchReport {
    pub height: usize,
    pub width: usize,
    pub iters: usize,
    pub ms_per_image: f64,
    pub fps: f64,
}

/// Mean eval-mode forward time for single images of `h x w`.
pub fn bench_model(model: &Model, h: usize, w: usize, warmup: usize, iters: usize, seed: u64) -> Result<BenchReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rgb = Tensor::uniform([1, 3, h, w], 1.0, &mut rng).map(|v| v.abs());
    let thermal = Tensor::uniform([1, 1, h, w], 1.0, &mut rng).map(|v| v.abs());
    for _ in 0..warmup {
        model.infer(&rgb, &thermal)?;
    }
    let start = Instant::now();
    for _ in 0..iters {
        model.infer(&rgb, &thermal)?;
    }
    let ms_per_image = start.elapsed().as_secs_f64() * 1000.0 / iters.max(1) as f64;
    Ok(BenchReport {
        height: h,
        width: w,
        iters,
        ms_per_image,
        fps: 1000.0 / ms_per_image,
    })
}

/// Benchmarks a checkpoint, or a freshly initialized model when none is given.
pub fn run_bench(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<BenchReport> {
    cfg.validate()?;
    let model = match checkpoint {
        Some(p) => load_checkpoint(cfg, p)?,
        None => Model::build(cfg.model.clone(), cfg.variant, cfg.seed)?,
    };
    bench_model(&model, cfg.bench_h, cfg.bench_w, cfg.bench_warmup, cfg.bench_iters, cfg.seed)
}

impl BenchReport {
    pub fn summary(&self) -> String {
        format!(
            "{}x{} over {} runs: {:.3} ms/image, {:.2} fps",
            self.height, self.width, self.iters, self.ms_per_image, self.fps
        )
    }
}
