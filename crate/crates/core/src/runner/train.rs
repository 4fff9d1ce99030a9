use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::eval::evaluate;
use super::open_dataset;
use crate::data::{make_batch, Batch, Sample};
use crate::error::{Error, Result};
use crate::model::{Ctx, Mode, Model, ModelConfig, Variant};
use crate::optim::{combined_loss, LossConfig, SgdState};
use crate::tensor::Graph;

pub const CHECKPOINT_FILE: &str = "model.fean";
pub const MODEL_CONFIG_FILE: &str = "model.cfg";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: u64,
    pub lr: f64,
    pub loss: f64,
    pub dice: f64,
    pub cross_entropy: f64,
    pub val_macc: f64,
    pub val_miou: f64,
}

pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation mIoU (the last
    /// epoch when there is no validation data, the initialization when no
    /// epoch ran).
    pub best: Model,
    pub last: Model,
    pub log: Vec<EpochLog>,
    pub steps: u64,
}

/// Losses of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub dice: f64,
    pub cross_entropy: f64,
}

/// Forward, backward and one SGD update on a batch; folds the batch-norm
/// statistics into the running buffers.
pub fn train_step(model: &mut Model, opt: &mut SgdState, batch: &Batch, loss_cfg: &LossConfig) -> Result<StepLoss> {
    let mut g = Graph::new();
    let vars = model.register(&mut g);
    let rgb = g.constant(batch.rgb.clone());
    let thermal = g.constant(batch.thermal.clone());
    let mut ctx = Ctx::new(&mut g, model.store(), &vars, Mode::Train);
    let logits = model.forward(&mut ctx, rgb, thermal)?;
    let updates = ctx.into_updates();
    let probs = g.softmax_channel(logits);
    let parts = combined_loss(&mut g, probs, &batch.labels, loss_cfg)?;
    g.backward(parts.total)?;
    let loss = StepLoss {
        total: g.scalar(parts.total),
        dice: g.scalar(parts.dice),
        cross_entropy: g.scalar(parts.cross_entropy),
    };
    if !loss.total.is_finite() {
        return Err(Error::Config(format!("training diverged: loss {}", loss.total)));
    }
    opt.step(
        model
            .store_mut()
            .iter_mut()
            .zip(&vars)
            .map(|((_, t), &v)| (t.data_mut(), g.grad(v))),
    )?;
    model.apply_updates(&updates);
    Ok(loss)
}

/// In-memory training loop; no files are touched.
pub fn train_model(cfg: &RunConfig, train: &[&Sample], val: &[&Sample]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("the training split is empty".into()));
    }
    let mut model = Model::build(cfg.model.clone(), cfg.variant, cfg.seed)?;
    let mut opt = SgdState::new(cfg.sgd, model.store().iter().map(|(_, t)| t.numel()));
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(3);
    let mut best = model.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let limit = if cfg.max_steps == 0 { u64::MAX } else { cfg.max_steps };

    for epoch in 1..=cfg.epochs {
        if opt.steps() >= limit {
            break;
        }
        order.shuffle(&mut order_rng);
        let mut sums = (0.0, 0.0, 0.0);
        let mut batches = 0;
        let mut lr = opt.lr();
        for chunk in order.chunks(cfg.batch_size) {
            if opt.steps() >= limit {
                break;
            }
            let items: Vec<&Sample> = chunk.iter().map(|&i| train[i]).collect();
            let batch = make_batch(&items)?;
            lr = opt.lr();
            let l = train_step(&mut model, &mut opt, &batch, &cfg.loss)?;
            sums = (sums.0 + l.total, sums.1 + l.dice, sums.2 + l.cross_entropy);
            batches += 1;
        }
        let n = batches.max(1) as f64;
        let (val_macc, val_miou) = if val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let m = evaluate(&model, val, cfg.batch_size)?.mean_metrics();
            (m.macc, m.miou)
        };
        log.push(EpochLog {
            epoch,
            steps: opt.steps(),
            lr,
            loss: sums.0 / n,
            dice: sums.1 / n,
            cross_entropy: sums.2 / n,
            val_macc,
            val_miou,
        });
        let score = if val_miou.is_nan() { f64::INFINITY } else { val_miou };
        if score > best_score || val.is_empty() {
            best_score = score;
            best = model.clone();
        }
    }
    Ok(TrainOutcome {
        best,
        last: model,
        log,
        steps: opt.steps(),
    })
}

pub fn format_log(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,steps,lr,loss,dice,cross_entropy,val_macc,val_miou\n");
    for e in log {
        let _ = writeln!(
            out,
            "{},{},{:.8},{:.8},{:.8},{:.8},{:.6},{:.6}",
            e.epoch, e.steps, e.lr, e.loss, e.dice, e.cross_entropy, e.val_macc, e.val_miou
        );
    }
    out
}

/// Model configuration plus variant, as stored next to a checkpoint.
pub fn model_config_text(model: &ModelConfig, variant: Variant) -> String {
    format!("{}variant = {}\n", model.to_kv(), variant.to_string().to_lowercase())
}

pub fn read_model_config(path: &Path) -> Result<(ModelConfig, Variant)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut model_text = String::new();
    let mut variant = Variant::Frts;
    for line in text.lines() {
        match line.split_once('=') {
            Some((k, v)) if k.trim() == "variant" => variant = v.trim().parse()?,
            _ => {
                model_text.push_str(line);
                model_text.push('\n');
            }
        }
    }
    Ok((ModelConfig::from_kv(&model_text)?, variant))
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub log: Vec<EpochLog>,
    pub steps: u64,
}

/// Trains on the train split, validates on val, writes the best checkpoint,
/// its model config and the epoch log under `out_dir`.
pub fn run_train(cfg: &RunConfig) -> Result<TrainReport> {
    let ds = open_dataset(&cfg.data_root)?;
    let outcome = train_model(cfg, &ds.split_samples("train")?, &ds.split_samples("val")?)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let checkpoint = cfg.out_dir.join(CHECKPOINT_FILE);
    outcome.best.save(&checkpoint)?;
    let cfg_path = cfg.out_dir.join(MODEL_CONFIG_FILE);
    fs::write(&cfg_path, model_config_text(&cfg.model, cfg.variant)).map_err(|e| Error::io(&cfg_path, e))?;
    let log_path = cfg.out_dir.join(TRAIN_LOG_FILE);
    fs::write(&log_path, format_log(&outcome.log)).map_err(|e| Error::io(&log_path, e))?;
    Ok(TrainReport {
        checkpoint,
        log_path,
        log: outcome.log,
        steps: outcome.steps,
    })
}
