use std::fs;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::eval::load_checkpoint;
use super::open_dataset;
use crate::data::{colorize, make_batch, Pnm};
use crate::error::{Error, Result};

/// Writes, for every sample of `split`, the RGB and thermal inputs, the
/// colorized ground truth and the colorized prediction as separate images
/// under `out_dir/predict`. Returns the written paths.
pub fn run_predict(cfg: &RunConfig, checkpoint: &Path, split: &str, limit: usize) -> Result<Vec<PathBuf>> {
    let model = load_checkpoint(cfg, checkpoint)?;
    let ds = open_dataset(&cfg.data_root)?;
    let samples = ds.split_samples(split)?;
    let dir = cfg.out_dir.join("predict");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut written = Vec::new();
    for sample in samples.into_iter().take(limit) {
        let batch = make_batch(&[sample])?;
        let pred = model.predict_labels(&batch.rgb, &batch.thermal)?.remove(0);
        let panels = [
            ("rgb.ppm", Pnm::from_tensor(&sample.rgb, 0)?),
            ("thermal.pgm", Pnm::from_tensor(&sample.thermal, 0)?),
            ("truth.ppm", colorize(&sample.labels)?),
            ("pred.ppm", colorize(&pred)?),
        ];
        for (suffix, img) in panels {
            let path = dir.join(format!("{}_{suffix}", sample.id));
            img.write(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}
