//! Experiment drivers behind the command-line tool.

mod ablation;
mod bench;
mod config;
mod eval;
mod gradcheck;
mod predict;
mod train;

use std::path::Path;

pub use ablation::{ablate, format_rows, format_runs, median, run_ablation, AblationReport, AblationRow, AblationRun};
pub use bench::{bench_model, run_bench, BenchReport};
pub use config::RunConfig;
pub use eval::{class_names, evaluate, load_checkpoint, run_eval, EvalReport};
pub use gradcheck::{
    gradcheck_names, reduced_model_config, run_gradcheck, GradCheckEntry, GradCheckReport, FD_STEP,
    GRAD_TOLERANCE,
};
pub use predict::run_predict;
pub use train::{
    format_log, model_config_text, read_model_config, run_train, train_model, train_step, EpochLog,
    StepLoss, TrainOutcome, TrainReport, CHECKPOINT_FILE, MODEL_CONFIG_FILE, TRAIN_LOG_FILE,
};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Opens a dataset directory, pointing at `generate` when it is missing.
pub fn open_dataset(root: &Path) -> Result<Dataset> {
    if !root.join("splits").join("train.txt").exists() {
        return Err(Error::Config(format!(
            "no dataset at {}; create one with `feanet generate --out {}`",
            root.display(),
            root.display()
        )));
    }
    Dataset::open(root)
}

/// Generates the configured synthetic dataset into `root`.
pub fn run_generate(cfg: &RunConfig, root: &Path) -> Result<Dataset> {
    cfg.validate()?;
    let ds = Dataset::generate(&cfg.generate_config())?;
    ds.write(root)?;
    Ok(ds)
}
