use std::fs;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::open_dataset;
use super::train::{read_model_config, MODEL_CONFIG_FILE};
use crate::data::{make_batch, Sample, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::Model;

/// Aggregate confusion matrix of eval-mode predictions over `samples`.
pub fn evaluate(model: &Model, samples: &[&Sample], batch_size: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(model.config().num_classes);
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch = make_batch(chunk)?;
        let preds = model.predict_labels(&batch.rgb, &batch.thermal)?;
        for (pred, sample) in preds.iter().zip(chunk) {
            cm.accumulate(pred.as_slice(), sample.labels.as_slice())?;
        }
    }
    Ok(cm)
}

pub fn class_names(classes: usize) -> Vec<String> {
    (0..classes)
        .map(|c| CLASS_NAMES.get(c).map_or_else(|| format!("class{c}"), |n| n.to_string()))
        .collect()
}

/// Loads a checkpoint, using the model config stored beside it when present.
pub fn load_checkpoint(cfg: &RunConfig, checkpoint: &Path) -> Result<Model> {
    let sidecar = checkpoint.with_file_name(MODEL_CONFIG_FILE);
    let (model_cfg, variant) = if sidecar.exists() {
        read_model_config(&sidecar)?
    } else {
        (cfg.model.clone(), cfg.variant)
    };
    if !checkpoint.exists() {
        return Err(Error::Config(format!(
            "checkpoint {} not found; run `feanet train` first",
            checkpoint.display()
        )));
    }
    Model::load(model_cfg, variant, checkpoint)
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub matrix: ConfusionMatrix,
    pub csv: String,
    pub path: PathBuf,
}

/// Per-class and mean metrics of a checkpoint on one split, written as CSV.
pub fn run_eval(cfg: &RunConfig, checkpoint: &Path, split: &str) -> Result<EvalReport> {
    let model = load_checkpoint(cfg, checkpoint)?;
    let ds = open_dataset(&cfg.data_root)?;
    let matrix = evaluate(&model, &ds.split_samples(split)?, cfg.batch_size)?;
    let names = class_names(matrix.classes());
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let csv = matrix.to_csv(&refs);
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let path = cfg.out_dir.join(format!("eval_{split}.csv"));
    fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
    Ok(EvalReport { matrix, csv, path })
}
