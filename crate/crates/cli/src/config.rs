//! Experiment file schema.
//!
//! ```toml
//! seed = 0
//! reps = 5
//! setting = "synthetic"
//! strategies = ["random", "entropy", "coreset", "badge", "bmmal"]
//!
//! [dataset]
//! kind = "synthetic"      # or "file" with `path` and `split_seed`
//! n = 2000
//! snr_m1 = 1.5
//!
//! [loop]
//! initial_budget = 100
//! round_budget = 50
//! rounds = 5
//! split = 1
//!
//! [model]
//! fusion = "concat"
//! hidden_m1 = 32          # omit for identity encoders
//!
//! [train]
//! epochs = 30
//! ```
//!
//! Every section and key is optional. Command-line flags take precedence over
//! file values, which take precedence over the defaults.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use mmal::alloop::{DatasetSource, ExperimentConfig};
use mmal::datagen::SynthConfig;
use mmal::model::{Fusion, TrainConfig};
use mmal::strategies::Strategy;
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub seed: u64,
    pub reps: usize,
    pub setting: String,
    pub strategies: Vec<Strategy>,
    pub dataset: DatasetSource,
    #[serde(rename = "loop")]
    pub al_loop: LoopSection,
    pub model: ModelSection,
    pub train: TrainConfig,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            reps: 5,
            setting: "synthetic".into(),
            strategies: Strategy::ALL.to_vec(),
            dataset: DatasetSource::Synthetic(SynthConfig::default()),
            al_loop: LoopSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopSection {
    pub initial_budget: usize,
    pub round_budget: usize,
    pub rounds: usize,
    pub split: usize,
}

impl Default for LoopSection {
    fn default() -> Self {
        Self {
            initial_budget: 100,
            round_budget: 50,
            rounds: 5,
            split: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub fusion: Fusion,
    pub hidden_m1: Option<usize>,
    pub hidden_m2: Option<usize>,
}

/// Values given on the command line; `None` keeps the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub strategies: Option<Vec<Strategy>>,
    pub budget: Option<usize>,
    pub rounds: Option<usize>,
    pub split: Option<usize>,
    pub fusion: Option<Fusion>,
    pub reps: Option<usize>,
}

impl FileConfig {
    /// Reads `path`, or returns the defaults when no file is given. Relative
    /// dataset paths are resolved against the config file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        if let DatasetSource::File { path: data, .. } = &mut cfg.dataset {
            if data.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                *data = base.join(&*data);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.strategies {
            self.strategies = v.clone();
        }
        if let Some(v) = o.budget {
            self.al_loop.round_budget = v;
        }
        if let Some(v) = o.rounds {
            self.al_loop.rounds = v;
        }
        if let Some(v) = o.split {
            self.al_loop.split = v;
        }
        if let Some(v) = o.fusion {
            self.model.fusion = v;
        }
        if let Some(v) = o.reps {
            self.reps = v;
        }
    }

    /// One experiment per configured strategy.
    pub fn experiments(&self) -> Result<Vec<ExperimentConfig>> {
        anyhow::ensure!(
            !self.strategies.is_empty(),
            "at least one strategy is required"
        );
        anyhow::ensure!(self.reps > 0, "reps must be positive");
        let mut seen = Vec::new();
        for s in &self.strategies {
            anyhow::ensure!(!seen.contains(s), "strategy `{s}` listed twice");
            seen.push(*s);
        }
        Ok(self
            .strategies
            .iter()
            .map(|&strategy| ExperimentConfig {
                setting: self.setting.clone(),
                dataset: self.dataset.clone(),
                strategy,
                initial_budget: self.al_loop.initial_budget,
                round_budget: self.al_loop.round_budget,
                rounds: self.al_loop.rounds,
                train: self.train,
                fusion: self.model.fusion,
                hidden_m1: self.model.hidden_m1,
                hidden_m2: self.model.hidden_m2,
                split: self.al_loop.split,
                master_seed: self.seed,
            })
            .collect())
    }

    /// Synthetic generator settings, with the dataset seed replaced by `seed`
    /// when given.
    pub fn synth(&self, seed: Option<u64>) -> Result<SynthConfig> {
        match &self.dataset {
            DatasetSource::Synthetic(s) => Ok(SynthConfig {
                seed: seed.unwrap_or(s.seed),
                ..s.clone()
            }),
            DatasetSource::File { .. } => {
                anyhow::bail!("`generate` needs a synthetic dataset section")
            }
        }
    }
}
