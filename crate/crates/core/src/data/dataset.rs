use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::labels::LabelMap;
use super::pnm::Pnm;
use super::scene::{generate_scene, Lighting, SceneSpec};
use super::split::{make_splits, DatasetSplit, SPLIT_NAMES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerateConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub num_classes: usize,
    /// Probability that a sample is rendered at night.
    pub night_fraction: f64,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            count: 64,
            height: 64,
            width: 64,
            min_objects: 2,
            max_objects: 6,
            num_classes: 9,
            night_fraction: 0.5,
            ratios: (0.5, 0.25, 0.25),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub rgb: Tensor,
    pub thermal: Tensor,
    pub labels: LabelMap,
    /// Unknown for samples loaded from disk without a lighting index.
    pub lighting: Option<Lighting>,
}

/// Seed of sample `index` under a dataset seed.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn sample_id(index: usize) -> String {
    format!("{index:05}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Indices into `samples`.
    pub split: DatasetSplit,
}

const LIGHTING_FILE: &str = "lighting.txt";

impl Dataset {
    pub fn generate(cfg: &GenerateConfig) -> Result<Self> {
        if cfg.min_objects > cfg.max_objects {
            return Err(Error::Config(format!(
                "min_objects {} exceeds max_objects {}",
                cfg.min_objects, cfg.max_objects
            )));
        }
        if !(0.0..=1.0).contains(&cfg.night_fraction) {
            return Err(Error::Config(format!(
                "night fraction {} outside [0, 1]",
                cfg.night_fraction
            )));
        }
        let split = make_splits(cfg.count, cfg.ratios, cfg.seed)?;
        let mut draws = ChaCha8Rng::seed_from_u64(cfg.seed);
        draws.set_stream(7);
        let mut samples = Vec::with_capacity(cfg.count);
        for i in 0..cfg.count {
            let objects = draws.random_range(cfg.min_objects..=cfg.max_objects);
            let lighting = if draws.random::<f64>() < cfg.night_fraction {
                Lighting::Night
            } else {
                Lighting::Day
            };
            let spec = SceneSpec::new(cfg.height, cfg.width, objects, lighting).classes(cfg.num_classes);
            let scene = generate_scene(sample_seed(cfg.seed, i), &spec)?;
            samples.push(Sample {
                id: sample_id(i),
                rgb: scene.rgb,
                thermal: scene.thermal,
                labels: scene.labels,
                lighting: Some(lighting),
            });
        }
        Ok(Dataset { samples, split })
    }

    /// Writes `rgb/<id>.ppm`, `thermal/<id>.pgm`, `labels/<id>.pgm`,
    /// `splits/{train,val,test}.txt` and a lighting index under `root`.
    pub fn write(&self, root: &Path) -> Result<()> {
        for dir in ["rgb", "thermal", "labels", "splits"] {
            let d = root.join(dir);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let mut lighting = String::new();
        for s in &self.samples {
            Pnm::from_tensor(&s.rgb, 0)?.write(&paths(root, &s.id).0)?;
            Pnm::from_tensor(&s.thermal, 0)?.write(&paths(root, &s.id).1)?;
            Pnm::from_labels(&s.labels).write(&paths(root, &s.id).2)?;
            if let Some(l) = s.lighting {
                lighting.push_str(&format!("{} {l}\n", s.id));
            }
        }
        write_text(&root.join(LIGHTING_FILE), &lighting)?;
        for name in SPLIT_NAMES {
            let ids = self.split.get(name).expect("known split");
            let text: String = ids.iter().map(|&i| format!("{}\n", self.samples[i].id)).collect();
            write_text(&root.join("splits").join(format!("{name}.txt")), &text)?;
        }
        Ok(())
    }

    pub fn open(root: &Path) -> Result<Self> {
        let mut lists = Vec::new();
        for name in SPLIT_NAMES {
            let path = root.join("splits").join(format!("{name}.txt"));
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            lists.push(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect::<Vec<_>>());
        }
        let mut ids: Vec<String> = lists.iter().flatten().cloned().collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("{}: a sample id appears in two splits", root.display())));
        }
        let lighting = read_lighting(root)?;
        let samples = ids
            .iter()
            .map(|id| load_sample(root, id, lighting.iter().find(|(i, _)| i == id).map(|(_, l)| *l)))
            .collect::<Result<Vec<_>>>()?;
        let index = |list: &Vec<String>| -> Vec<usize> {
            list.iter().map(|id| ids.binary_search(id).expect("collected")).collect()
        };
        Ok(Dataset {
            samples,
            split: DatasetSplit {
                train: index(&lists[0]),
                val: index(&lists[1]),
                test: index(&lists[2]),
            },
        })
    }

    pub fn split_samples(&self, name: &str) -> Result<Vec<&Sample>> {
        let ids = self
            .split
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown split {name:?} (train, val, test)")))?;
        Ok(ids.iter().map(|&i| &self.samples[i]).collect())
    }
}

fn paths(root: &Path, id: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        root.join("rgb").join(format!("{id}.ppm")),
        root.join("thermal").join(format!("{id}.pgm")),
        root.join("labels").join(format!("{id}.pgm")),
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_lighting(root: &Path) -> Result<Vec<(String, Lighting)>> {
    let path = root.join(LIGHTING_FILE);
    let Ok(text) = fs::read_to_string(&path) else {
        return Ok(Vec::new());
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (id, mode) = l
                .split_once(' ')
                .ok_or_else(|| Error::Config(format!("{}: malformed line {l:?}", path.display())))?;
            Ok((id.to_string(), mode.parse()?))
        })
        .collect()
}

pub fn load_sample(root: &Path, id: &str, lighting: Option<Lighting>) -> Result<Sample> {
    let (rgb, thermal, labels) = paths(root, id);
    let rgb = Pnm::read(&rgb)?.to_tensor();
    let thermal = Pnm::read(&thermal)?.to_tensor();
    let labels = Pnm::read(&labels)?.to_labels()?;
    let (r, t) = (rgb.shape(), thermal.shape());
    if r.c != 3 || t.c != 1 || (r.h, r.w) != (t.h, t.w) || (r.h, r.w) != (labels.height(), labels.width()) {
        return Err(Error::shape("sample", format!("rasters of {id} disagree in size")));
    }
    Ok(Sample {
        id: id.to_string(),
        rgb,
        thermal,
        labels,
        lighting,
    })
}

/// Stacked inputs and flattened labels of several samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub rgb: Tensor,
    pub thermal: Tensor,
    pub labels: Vec<u8>,
}

pub fn make_batch(samples: &[&Sample]) -> Result<Batch> {
    let rgb: Vec<&Tensor> = samples.iter().map(|s| &s.rgb).collect();
    let thermal: Vec<&Tensor> = samples.iter().map(|s| &s.thermal).collect();
    Ok(Batch {
        rgb: Tensor::stack(&rgb)?,
        thermal: Tensor::stack(&thermal)?,
        labels: samples.iter().flat_map(|s| s.labels.as_slice().iter().copied()).collect(),
    })
}
