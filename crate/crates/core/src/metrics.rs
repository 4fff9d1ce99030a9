//! Confusion-matrix segmentation metrics: per-class accuracy (recall) and
//! IoU, and their means over classes.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `counts[t * classes + p]` is the number of pixels of true class `t`
/// predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

/// Accuracy and IoU of one class; `None` where the ratio is 0/0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub acc: Option<f64>,
    pub iou: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanMetrics {
    pub macc: f64,
    pub miou: f64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Row-major `classes x classes` counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::shape(
                "confusion matrix",
                format!("{} counts for {classes} classes", counts.len()),
            ));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::shape(
                "confusion matrix",
                format!("{} predictions for {} labels", pred.len(), truth.len()),
            ));
        }
        if let Some(&l) = pred.iter().chain(truth).find(|&&l| l as usize >= self.classes) {
            return Err(Error::LabelOutOfRange {
                label: l as usize,
                classes: self.classes,
            });
        }
        for (&p, &t) in pred.iter().zip(truth) {
            self.counts[t as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape(
                "confusion matrix",
                format!("cannot merge {} into {} classes", other.classes, self.classes),
            ));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    fn row_sum(&self, c: usize) -> u64 {
        self.counts[c * self.classes..(c + 1) * self.classes].iter().sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }

    pub fn per_class(&self) -> Vec<ClassMetrics> {
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c);
                let row = self.row_sum(c);
                let union = row + self.col_sum(c) - tp;
                ClassMetrics {
                    acc: (row > 0).then(|| tp as f64 / row as f64),
                    iou: (union > 0).then(|| tp as f64 / union as f64),
                }
            })
            .collect()
    }

    /// Means over the classes where each ratio is defined.
    pub fn mean_metrics(&self) -> MeanMetrics {
        let per = self.per_class();
        MeanMetrics {
            macc: mean_defined(per.iter().map(|m| m.acc)),
            miou: mean_defined(per.iter().map(|m| m.iou)),
        }
    }

    /// One `name,acc,iou` row per class (empty fields when undefined) and a
    /// closing `mean` row.
    pub fn to_csv(&self, names: &[&str]) -> String {
        let mut out = String::from("class,acc,iou\n");
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for (c, m) in self.per_class().iter().enumerate() {
            let name = names.get(c).map_or_else(|| c.to_string(), |n| n.to_string());
            let _ = writeln!(out, "{name},{},{}", fmt(m.acc), fmt(m.iou));
        }
        let mean = self.mean_metrics();
        let _ = writeln!(out, "mean,{:.6},{:.6}", mean.macc, mean.miou);
        out
    }
}

/// NaN when nothing is defined.
fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}
