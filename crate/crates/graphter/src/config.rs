//! Run configuration: every hyperparameter, seed and protocol switch, with a
//! flat `key = value` file format. Unknown keys are rejected.

use crate::data::{DatasetConfig, ShapeKind};
use crate::error::{Error, Result};
use crate::model::ArchConfig;
use crate::transforms::{SampleMode, Strategy, TransformKind};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchChoice {
    Desk,
    Full,
}

impl fmt::Display for ArchChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchChoice::Desk => "desk",
            ArchChoice::Full => "full",
        })
    }
}

impl FromStr for ArchChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(ArchChoice::Desk),
            "full" => Ok(ArchChoice::Full),
            other => Err(Error::InvalidArgument(format!("unknown arch '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub kind: TransformKind,
    pub strategy: Strategy,
    pub mode: SampleMode,
    pub rate: f64,
    pub k: usize,
    pub arch: ArchChoice,
    pub dynamic_graph: bool,
    pub data_classes: Vec<ShapeKind>,
    pub data_per_class: usize,
    pub data_points: usize,
    pub data_noise: f64,
    pub data_split: f64,
    pub probe_epochs: usize,
    pub probe_lr: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            epochs: 30,
            batch_size: 8,
            lr_max: 0.05,
            lr_min: 0.0005,
            kind: TransformKind::Shearing,
            strategy: Strategy::Isotropic,
            mode: SampleMode::Global,
            rate: 0.25,
            k: 10,
            arch: ArchChoice::Desk,
            dynamic_graph: false,
            data_classes: ShapeKind::ALL.to_vec(),
            data_per_class: 16,
            data_points: 256,
            data_noise: 0.01,
            data_split: 0.75,
            probe_epochs: 30,
            probe_lr: 0.01,
        }
    }
}

impl RunConfig {
    pub fn arch_config(&self) -> ArchConfig {
        match self.arch {
            ArchChoice::Desk => ArchConfig::desk(self.k, self.dynamic_graph),
            ArchChoice::Full => ArchConfig::full(self.k, self.dynamic_graph),
        }
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            classes: self.data_classes.clone(),
            per_class: self.data_per_class,
            n_points: self.data_points,
            noise_sigma: self.data_noise,
            split_fraction: self.data_split,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(Error::InvalidArgument(format!("rate {} outside (0,1]", self.rate)));
        }
        if self.lr_min > self.lr_max {
            return Err(Error::InvalidArgument("lr_min exceeds lr_max".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        if !(self.data_split > 0.0 && self.data_split < 1.0) {
            return Err(Error::InvalidArgument(format!("data_split {} outside (0,1)", self.data_split)));
        }
        Ok(())
    }

    pub fn to_file_string(&self) -> String {
        let classes =
            self.data_classes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "seed = {}\nepochs = {}\nbatch_size = {}\nlr_max = {}\nlr_min = {}\nkind = {}\n\
             strategy = {}\nmode = {}\nrate = {}\nk = {}\narch = {}\ndynamic_graph = {}\n\
             data_classes = {}\ndata_per_class = {}\ndata_points = {}\ndata_noise = {}\n\
             data_split = {}\nprobe_epochs = {}\nprobe_lr = {}\n",
            self.seed,
            self.epochs,
            self.batch_size,
            self.lr_max,
            self.lr_min,
            self.kind,
            self.strategy,
            self.mode,
            self.rate,
            self.k,
            self.arch,
            self.dynamic_graph,
            classes,
            self.data_per_class,
            self.data_points,
            self.data_noise,
            self.data_split,
            self.probe_epochs,
            self.probe_lr,
        )
    }

    pub fn from_file_string(text: &str, path: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_string(),
                line: ln + 1,
                message: format!("expected 'key = value', got '{raw}'"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |message: String| Error::Parse { path: path.to_string(), line: ln + 1, message };
            macro_rules! parse {
                ($value:expr) => {
                    $value.parse().map_err(|_| bad(format!("bad value '{value}' for {key}")))?
                };
            }
            match key {
                "seed" => config.seed = parse!(value),
                "epochs" => config.epochs = parse!(value),
                "batch_size" => config.batch_size = parse!(value),
                "lr_max" => config.lr_max = parse!(value),
                "lr_min" => config.lr_min = parse!(value),
                "kind" => config.kind = parse!(value),
                "strategy" => config.strategy = parse!(value),
                "mode" => config.mode = parse!(value),
                "rate" => config.rate = parse!(value),
                "k" => config.k = parse!(value),
                "arch" => config.arch = parse!(value),
                "dynamic_graph" => config.dynamic_graph = parse!(value),
                "data_classes" => {
                    config.data_classes = value
                        .split(',')
                        .map(|c| c.trim().parse())
                        .collect::<Result<Vec<_>>>()
                        .map_err(|e| bad(e.to_string()))?;
                }
                "data_per_class" => config.data_per_class = parse!(value),
                "data_points" => config.data_points = parse!(value),
                "data_noise" => config.data_noise = parse!(value),
                "data_split" => config.data_split = parse!(value),
                "probe_epochs" => config.probe_epochs = parse!(value),
                "probe_lr" => config.probe_lr = parse!(value),
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_file_string(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }
}
