use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use super::config::RunConfig;
use super::eval::evaluate;
use super::open_dataset;
use super::train::train_model;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Variant;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub macc: f64,
    pub miou: f64,
}

/// Per-variant medians over seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub macc: f64,
    pub miou: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Trains every variant for seeds `seed, seed + 1, ...` on the train split
/// and scores it on `eval_split`. Within one seed all variants start from
/// the same weights and see batches in the same order.
pub fn ablate(cfg: &RunConfig, ds: &Dataset) -> Result<(Vec<AblationRow>, Vec<AblationRun>)> {
    let train = ds.split_samples("train")?;
    let val = ds.split_samples("val")?;
    let test = ds.split_samples(&cfg.eval_split)?;
    if test.is_empty() {
        return Err(Error::Config(format!("split {:?} is empty", cfg.eval_split)));
    }
    let mut runs = Vec::new();
    for k in 0..cfg.ablation_seeds {
        let seed = cfg.seed + k as u64;
        for variant in Variant::ALL {
            let run_cfg = RunConfig {
                seed,
                variant,
                ..cfg.clone()
            };
            let outcome = train_model(&run_cfg, &train, &val)?;
            let m = evaluate(&outcome.best, &test, cfg.batch_size)?.mean_metrics();
            runs.push(AblationRun {
                variant,
                seed,
                macc: m.macc,
                miou: m.miou,
            });
        }
    }
    let rows = Variant::ALL
        .into_iter()
        .map(|variant| {
            let of = |f: fn(&AblationRun) -> f64| -> Vec<f64> {
                runs.iter().filter(|r| r.variant == variant).map(f).collect()
            };
            AblationRow {
                variant,
                macc: median(&of(|r| r.macc)),
                miou: median(&of(|r| r.miou)),
            }
        })
        .collect();
    Ok((rows, runs))
}

pub fn format_rows(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,macc,miou\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{:.6}", r.variant, r.macc, r.miou);
    }
    out
}

pub fn format_runs(runs: &[AblationRun]) -> String {
    let mut out = String::from("variant,seed,macc,miou\n");
    for r in runs {
        let _ = writeln!(out, "{},{},{:.6},{:.6}", r.variant, r.seed, r.macc, r.miou);
    }
    out
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<AblationRun>,
    pub path: PathBuf,
}

/// Writes `ablation.csv` (medians) and `ablation_runs.csv` (every run).
pub fn run_ablation(cfg: &RunConfig) -> Result<AblationReport> {
    let ds = open_dataset(&cfg.data_root)?;
    let (rows, runs) = ablate(cfg, &ds)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let path = cfg.out_dir.join("ablation.csv");
    fs::write(&path, format_rows(&rows)).map_err(|e| Error::io(&path, e))?;
    let runs_path = cfg.out_dir.join("ablation_runs.csv");
    fs::write(&runs_path, format_runs(&runs)).map_err(|e| Error::io(&runs_path, e))?;
    Ok(AblationReport { rows, runs, path })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
