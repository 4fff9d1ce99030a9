use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{read_container, write_container, Graph, RunningStats, Tensor, Var};

/// Index of a learnable tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Index of a batch-norm running-statistics buffer in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StatsId(pub(crate) usize);

/// Named learnable tensors plus batch-norm buffers, in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<(String, Tensor)>,
    stats: Vec<(String, RunningStats)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push((name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn add_stats(&mut self, name: impl Into<String>, channels: usize) -> StatsId {
        self.stats.push((name.into(), RunningStats::new(channels)));
        StatsId(self.stats.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].1
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].0
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|(n, _)| n == name).map(ParamId)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.find(name).map(|id| self.tensor(id))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.find(name).map(|id| self.tensor_mut(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn stats(&self, id: StatsId) -> &RunningStats {
        &self.stats[id.0].1
    }

    pub fn stats_mut(&mut self, id: StatsId) -> &mut RunningStats {
        &mut self.stats[id.0].1
    }

    pub fn stats_iter(&self) -> impl Iterator<Item = (&str, &RunningStats)> {
        self.stats.iter().map(|(n, s)| (n.as_str(), s))
    }

    /// Adds every parameter to `g` as a differentiable leaf; the returned
    /// handles are indexed by [`ParamId`].
    pub fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|(_, t)| g.param(t.clone())).collect()
    }

    /// Like [`ParamStore::register`] but without gradient tracking.
    pub fn register_frozen(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|(_, t)| g.constant(t.clone())).collect()
    }

    fn records(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self.params.clone();
        for (name, s) in &self.stats {
            out.push((format!("{name}.running_mean"), Tensor::vector(s.mean.clone())));
            out.push((format!("{name}.running_var"), Tensor::vector(s.var.clone())));
        }
        out
    }

    pub fn write_to<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let records = self.records();
        let refs: Vec<(&str, &Tensor)> = records.iter().map(|(n, t)| (n.as_str(), t)).collect();
        write_container(out, &refs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    /// Overwrites every tensor and buffer from a container. The container must
    /// hold exactly this store's names with matching shapes.
    pub fn read_from<R: std::io::Read>(&mut self, input: R) -> Result<()> {
        let mut loaded = read_container(input)?;
        let expected = self.records();
        if loaded.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                loaded.len(),
                expected.len()
            )));
        }
        loaded.sort_by(|a, b| a.0.cmp(&b.0));
        let lookup = |name: &str| -> Result<&Tensor> {
            loaded
                .binary_search_by(|(n, _)| n.as_str().cmp(name))
                .map(|i| &loaded[i].1)
                .map_err(|_| Error::Checkpoint(format!("checkpoint is missing {name}")))
        };
        for (name, want) in &expected {
            let got = lookup(name)?;
            if got.shape() != want.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name} has shape {}, model expects {}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        for (name, t) in &mut self.params {
            *t = lookup(name)?.clone();
        }
        for (name, s) in &mut self.stats {
            s.mean = lookup(&format!("{name}.running_mean"))?.data().to_vec();
            s.var = lookup(&format!("{name}.running_var"))?.data().to_vec();
        }
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        self.read_from(BufReader::new(f))
    }
}
