//! The pool-based active-learning protocol.
//!
//! Round 0 labels a seeded random subset of the train split. Every round then
//! retrains a freshly initialised model on the labeled pool, evaluates it on
//! the test split and, unless it is the last round, queries the next batch.
//! All randomness derives from `(master_seed, repetition, round)`; the strategy
//! never enters a seed, so strategies compared under one master seed share
//! their initial pool and model initialisations.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{attribute_forward, AttributionResult};
use crate::datagen::{generate_synthetic, load_features, Dataset, FeatureSchema, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{mean_contribution, MetricRecord};
use crate::model::{
    evaluate, init_model, train, Accuracy, Fusion, ModelDims, ModelParams, TrainConfig,
};
use crate::scalar::Scalar;
use crate::seeds::{self, stream};
use crate::strategies::{query, QueryRequest, SelectionRecord, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SynthConfig),
    File {
        path: PathBuf,
        #[serde(default)]
        split_seed: u64,
    },
}

impl DatasetSource {
    pub fn load<T: Scalar>(&self) -> Result<Dataset<T>> {
        match self {
            DatasetSource::Synthetic(cfg) => generate_synthetic(cfg),
            DatasetSource::File { path, split_seed } => {
                let schema = FeatureSchema {
                    split_seed: *split_seed,
                    ..FeatureSchema::infer(path)?
                };
                load_features(path, &schema)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Label used to group runs in metric files.
    pub setting: String,
    pub dataset: DatasetSource,
    pub strategy: Strategy,
    pub initial_budget: usize,
    pub round_budget: usize,
    pub rounds: usize,
    /// `seed` is ignored; per-round training seeds are derived.
    pub train: TrainConfig,
    pub fusion: Fusion,
    pub hidden_m1: Option<usize>,
    pub hidden_m2: Option<usize>,
    pub split: usize,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn validate_for(&self, train_size: usize) -> Result<()> {
        if self.initial_budget == 0 || self.round_budget == 0 {
            return Err(Error::config(
                "initial_budget and round_budget must be positive",
            ));
        }
        let needed = self.initial_budget + self.rounds * self.round_budget;
        if needed > train_size {
            return Err(Error::config(format!(
                "initial_budget + rounds * round_budget = {needed} exceeds the {train_size} training samples"
            )));
        }
        if self.split == 0 || !self.round_budget.is_multiple_of(self.split) {
            return Err(Error::config(format!(
                "split {} must divide round_budget {}",
                self.split, self.round_budget
            )));
        }
        self.train.validate()
    }

    fn dims(&self, ds: &Dataset<impl Scalar>) -> ModelDims {
        let (d1, d2) = ds.modality_dims();
        ModelDims {
            input_m1: d1,
            input_m2: d2,
            hidden_m1: self.hidden_m1,
            hidden_m2: self.hidden_m2,
            num_classes: ds.num_classes(),
        }
    }
}

/// Metrics of one active-learning round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub labeled: usize,
    pub accuracy: Accuracy,
    /// Mean test-set modality contribution of this round's model.
    pub phi_mean: [f64; 2],
    /// Indices that joined the labeled pool in this round (the random seed
    /// pool for round 0).
    pub selected: Vec<usize>,
    /// Strategy score per entry of `selected`; empty for round 0.
    pub scores: Vec<f64>,
    /// Attribution of each selected sample under the model that queried it;
    /// empty for round 0.
    pub selected_attributions: Vec<AttributionResult<f64>>,
    pub wall_ms: f64,
}

impl RoundReport {
    pub fn mean_selected_rho(&self) -> Option<f64> {
        let n = self.selected_attributions.len();
        (n > 0).then(|| {
            self.selected_attributions
                .iter()
                .map(|a| a.rho)
                .sum::<f64>()
                / n as f64
        })
    }
}

/// All rounds of one repetition plus the last round's model.
#[derive(Debug, Clone)]
pub struct RunResult<T = f64> {
    pub repetition: usize,
    pub reports: Vec<RoundReport>,
    pub final_model: ModelParams<T>,
    pub final_labeled: Vec<usize>,
}

fn to_f64_attr<T: Scalar>(a: &AttributionResult<T>) -> AttributionResult<f64> {
    AttributionResult {
        phi: a.phi.map(T::as_f64),
        contribution: a.contribution.map(T::as_f64),
        rho: a.rho.as_f64(),
        weights: a.weights.map(T::as_f64),
        degenerate: a.degenerate,
        pseudo_label: a.pseudo_label,
    }
}

/// Seeded initial pool for a repetition; independent of the strategy.
pub fn initial_pool(
    train_indices: &[usize],
    budget: usize,
    master_seed: u64,
    repetition: usize,
) -> Vec<usize> {
    let mut rng = seeds::rng(seeds::derive(
        master_seed,
        &[stream::INITIAL_POOL, repetition as u64],
    ));
    sample_indices(&mut rng, train_indices.len(), budget)
        .into_iter()
        .map(|j| train_indices[j])
        .collect()
}

/// Runs one repetition on an already-loaded dataset.
pub fn run_experiment_on<T: Scalar>(
    cfg: &ExperimentConfig,
    dataset: &Dataset<T>,
    repetition: usize,
) -> Result<RunResult<T>> {
    let train_split = dataset.train_indices();
    cfg.validate_for(train_split.len())?;
    if dataset.test_indices().is_empty() {
        return Err(Error::Empty("test split"));
    }
    let dims = cfg.dims(dataset);
    let rep = repetition as u64;

    let mut labeled = initial_pool(train_split, cfg.initial_budget, cfg.master_seed, repetition);
    let mut in_labeled = vec![false; dataset.len()];
    labeled.iter().for_each(|&i| in_labeled[i] = true);

    let mut reports = Vec::with_capacity(cfg.rounds + 1);
    let mut selected = labeled.clone();
    let mut scores = Vec::new();
    let mut selected_attributions = Vec::new();
    let mut clock = Instant::now();

    for round in 0..=cfg.rounds {
        let t = round as u64;
        let wrap = |e: Error| Error::Round {
            round,
            source: Box::new(e),
        };
        let fresh = init_model(
            dims,
            cfg.fusion,
            seeds::derive(cfg.master_seed, &[stream::MODEL_INIT, rep, t]),
        )
        .map_err(wrap)?;
        let train_cfg = TrainConfig {
            seed: seeds::derive(cfg.master_seed, &[stream::TRAIN, rep, t]),
            ..cfg.train
        };
        let model = train(&fresh, dataset, &labeled, &train_cfg)
            .map_err(wrap)?
            .params;
        let accuracy = evaluate(&model, dataset, dataset.test_indices()).map_err(wrap)?;
        let phi_mean = mean_contribution(&model, dataset, dataset.test_indices()).map_err(wrap)?;
        reports.push(RoundReport {
            round,
            labeled: labeled.len(),
            accuracy,
            phi_mean,
            selected: std::mem::take(&mut selected),
            scores: std::mem::take(&mut scores),
            selected_attributions: std::mem::take(&mut selected_attributions),
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        });
        if round == cfg.rounds {
            return Ok(RunResult {
                repetition,
                reports,
                final_model: model,
                final_labeled: labeled,
            });
        }

        clock = Instant::now();
        let next = round + 1;
        let wrap_next = |e: Error| Error::Round {
            round: next,
            source: Box::new(e),
        };
        let unlabeled: Vec<usize> = train_split
            .iter()
            .copied()
            .filter(|&i| !in_labeled[i])
            .collect();
        let req = QueryRequest {
            unlabeled,
            labeled: labeled.clone(),
            budget: cfg.round_budget,
            seed: seeds::derive(cfg.master_seed, &[stream::QUERY, rep, t]),
            strategy: cfg.strategy,
            split: cfg.split,
        };
        let result = query(&req, &model, dataset).map_err(wrap_next)?;
        selected_attributions = result
            .diagnostics
            .par_iter()
            .map(|d| {
                let a = match d.attribution {
                    Some(a) => a,
                    None => {
                        attribute_forward(&model, &model.forward_unchecked(dataset.sample(d.index)))
                    }
                };
                to_f64_attr(&a)
            })
            .collect();
        scores = result
            .diagnostics
            .iter()
            .map(|d| d.score.as_f64())
            .collect();
        for &i in &result.selected {
            if in_labeled[i] {
                return Err(wrap_next(Error::query(format!("index {i} selected twice"))));
            }
            in_labeled[i] = true;
        }
        labeled.extend_from_slice(&result.selected);
        selected = result.selected;
    }
    unreachable!("loop returns on the last round")
}

/// Loads the configured dataset and runs one repetition.
pub fn run_experiment<T: Scalar>(
    cfg: &ExperimentConfig,
    repetition: usize,
) -> Result<RunResult<T>> {
    let ds = cfg.dataset.load()?;
    run_experiment_on(cfg, &ds, repetition)
}

/// Per-round mean and sample standard deviation across repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundSummary {
    pub round: usize,
    pub labeled: usize,
    pub mean: [f64; 5],
    pub std: [f64; 5],
}

impl RoundSummary {
    /// Order of the five summarised quantities.
    pub const FIELDS: [&'static str; 5] = ["mm_top1", "m1_top1", "m2_top1", "phi_m1", "phi_m2"];
}

fn summarize(runs: &[RunResult<impl Scalar>]) -> Vec<RoundSummary> {
    let rounds = runs.first().map_or(0, |r| r.reports.len());
    (0..rounds)
        .map(|t| {
            let values: Vec<[f64; 5]> = runs
                .iter()
                .map(|r| {
                    let rep = &r.reports[t];
                    [
                        rep.accuracy.mm,
                        rep.accuracy.m1,
                        rep.accuracy.m2,
                        rep.phi_mean[0],
                        rep.phi_mean[1],
                    ]
                })
                .collect();
            let n = values.len() as f64;
            let mut mean = [0.0; 5];
            let mut std = [0.0; 5];
            for k in 0..5 {
                mean[k] = values.iter().map(|v| v[k]).sum::<f64>() / n;
                if values.len() > 1 {
                    let var =
                        values.iter().map(|v| (v[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0);
                    std[k] = var.sqrt();
                }
            }
            RoundSummary {
                round: t,
                labeled: runs[0].reports[t].labeled,
                mean,
                std,
            }
        })
        .collect()
}

/// Every repetition of one configuration.
#[derive(Debug, Clone)]
pub struct StrategyRuns<T = f64> {
    pub config: ExperimentConfig,
    pub runs: Vec<RunResult<T>>,
    pub summary: Vec<RoundSummary>,
}

#[derive(Debug, Clone)]
pub struct ReportBundle<T = f64> {
    pub entries: Vec<StrategyRuns<T>>,
}

impl<T: Scalar> ReportBundle<T> {
    pub fn metric_records(&self) -> Vec<MetricRecord> {
        let mut out = Vec::new();
        for e in &self.entries {
            for run in &e.runs {
                for rep in &run.reports {
                    out.push(MetricRecord {
                        setting: e.config.setting.clone(),
                        strategy: e.config.strategy.name().to_string(),
                        repetition: run.repetition,
                        round: rep.round,
                        labeled: rep.labeled,
                        mm_top1: rep.accuracy.mm,
                        m1_top1: rep.accuracy.m1,
                        m2_top1: rep.accuracy.m2,
                        phi_m1: rep.phi_mean[0],
                        phi_m2: rep.phi_mean[1],
                    });
                }
            }
        }
        out
    }

    /// Selection-log records of every queried sample (round 0 excluded).
    pub fn selection_records(&self) -> Vec<SelectionRecord> {
        let mut out = Vec::new();
        for e in &self.entries {
            for run in &e.runs {
                for rep in run.reports.iter().skip(1) {
                    for ((&sample, &score), a) in rep
                        .selected
                        .iter()
                        .zip(&rep.scores)
                        .zip(&rep.selected_attributions)
                    {
                        out.push(SelectionRecord {
                            setting: e.config.setting.clone(),
                            repetition: run.repetition,
                            round: rep.round,
                            strategy: e.config.strategy,
                            sample,
                            score,
                            phi_m1: a.contribution[0],
                            phi_m2: a.contribution[1],
                            rho: a.rho,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Runs every configuration `repetitions` times.
///
/// Distinct dataset sources are loaded once. Jobs run in parallel and are
/// collected in configuration-then-repetition order, so the bundle is
/// identical regardless of scheduling.
pub fn run_suite<T: Scalar>(
    cfgs: &[ExperimentConfig],
    repetitions: usize,
) -> Result<ReportBundle<T>> {
    if repetitions == 0 {
        return Err(Error::config("repetitions must be positive"));
    }
    let mut sources: Vec<(&DatasetSource, Dataset<T>)> = Vec::new();
    let mut source_of = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        let pos = match sources.iter().position(|(s, _)| *s == &cfg.dataset) {
            Some(p) => p,
            None => {
                sources.push((&cfg.dataset, cfg.dataset.load()?));
                sources.len() - 1
            }
        };
        source_of.push(pos);
    }
    let jobs: Vec<(usize, usize)> = (0..cfgs.len())
        .flat_map(|c| (0..repetitions).map(move |r| (c, r)))
        .collect();
    let results: Vec<Result<RunResult<T>>> = jobs
        .par_iter()
        .map(|&(c, r)| run_experiment_on(&cfgs[c], &sources[source_of[c]].1, r))
        .collect();
    let mut results = results.into_iter();
    let mut entries = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        let runs = (0..repetitions)
            .map(|_| results.next().expect("one result per job"))
            .collect::<Result<Vec<_>>>()?;
        let summary = summarize(&runs);
        entries.push(StrategyRuns {
            config: cfg.clone(),
            runs,
            summary,
        });
    }
    Ok(ReportBundle { entries })
}
