use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mmal::alloop::run_suite;
use mmal::attribution::attribute;
use mmal::datagen::{generate_synthetic, load_dataset, meta_path, save_dataset};
use mmal::eval::{
    metrics_from_csv, metrics_to_csv, pairwise_matrix, Metric, MetricRecord, DEFAULT_CONFIDENCE,
};
use mmal::model::{checkpoint_to_string, load_checkpoint};
use mmal::strategies::write_selection_log;
use mmal::{Bundle64, Dataset64, Model64};

use crate::config::{FileConfig, Overrides};

/// Files a command is about to write; refuses to clobber without `force`.
struct Outputs {
    dir: PathBuf,
    force: bool,
    pending: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: PathBuf, force: bool) -> Self {
        Self {
            dir,
            force,
            pending: Vec::new(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Fails early if `names` already exist and `--force` is absent.
    fn check(&self, names: &[&str]) -> Result<()> {
        if self.force {
            return Ok(());
        }
        for name in names {
            let p = self.path(name);
            if p.exists() {
                bail!("{} already exists (pass --force to overwrite)", p.display());
            }
        }
        Ok(())
    }

    fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.pending.push((self.path(name), bytes.into()));
    }

    /// Writes every pending file; called once all results are computed.
    fn flush(self) -> Result<()> {
        for (path, bytes) in &self.pending {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)
                    .with_context(|| format!("creating {}", parent.display()))?;
            }
            fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

pub fn generate(config: Option<&Path>, seed: Option<u64>, out: PathBuf, force: bool) -> Result<()> {
    let cfg = FileConfig::load(config)?;
    let synth = cfg.synth(seed)?;
    let outputs = Outputs::new(out, force);
    outputs.check(&["dataset.csv", "dataset.csv.meta"])?;
    let ds: Dataset64 = generate_synthetic(&synth).context("generating dataset")?;
    let path = outputs.path("dataset.csv");
    fs::create_dir_all(&outputs.dir)
        .with_context(|| format!("creating {}", outputs.dir.display()))?;
    save_dataset(&ds, &path).with_context(|| format!("writing {}", path.display()))?;
    let (d1, d2) = ds.modality_dims();
    println!(
        "wrote {} ({} samples, {} classes, dims {d1}+{d2}, {} train / {} test)",
        path.display(),
        ds.len(),
        ds.num_classes(),
        ds.train_indices().len(),
        ds.test_indices().len()
    );
    println!("metadata {}", meta_path(&path).display());
    Ok(())
}

pub fn run(config: Option<&Path>, overrides: &Overrides, out: PathBuf, force: bool) -> Result<()> {
    let mut cfg = FileConfig::load(config)?;
    cfg.apply(overrides);
    let experiments = cfg.experiments()?;
    let mut outputs = Outputs::new(out, force);
    outputs.check(&["metrics.csv", "selections.jsonl", "summary.csv"])?;

    let bundle: Bundle64 = run_suite(&experiments, cfg.reps).context("running experiments")?;

    outputs.add("metrics.csv", metrics_to_csv(&bundle.metric_records()));
    let mut log = Vec::new();
    write_selection_log(&mut log, &bundle.selection_records())?;
    outputs.add("selections.jsonl", log);
    outputs.add("summary.csv", summary_csv(&bundle));
    for entry in &bundle.entries {
        for run in &entry.runs {
            let name = format!(
                "checkpoints/{}-rep{}.ckpt",
                entry.config.strategy, run.repetition
            );
            outputs.add(&name, checkpoint_to_string(&run.final_model));
        }
    }
    let dir = outputs.dir.clone();
    outputs.flush()?;

    println!(
        "final-round top-1 accuracy (mean over {} repetitions):",
        cfg.reps
    );
    println!("{:<10} {:>8} {:>8} {:>8}", "strategy", "mm", "m1", "m2");
    for entry in &bundle.entries {
        let last = entry.summary.last().expect("at least one round");
        println!(
            "{:<10} {:>8.4} {:>8.4} {:>8.4}",
            entry.config.strategy.name(),
            last.mean[0],
            last.mean[1],
            last.mean[2]
        );
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

fn summary_csv(bundle: &Bundle64) -> String {
    let mut out = String::from("setting,strategy,round,labeled");
    for f in mmal::alloop::RoundSummary::FIELDS {
        write!(out, ",{f}_mean,{f}_std").unwrap();
    }
    out.push('\n');
    for e in &bundle.entries {
        for s in &e.summary {
            write!(
                out,
                "{},{},{},{}",
                e.config.setting, e.config.strategy, s.round, s.labeled
            )
            .unwrap();
            for k in 0..5 {
                write!(out, ",{},{}", s.mean[k], s.std[k]).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// Merges metric files. A strategy already seen in an earlier file is
/// renamed `name#k` (`k` = 1-based file position) so repeated runs of one
/// strategy stay distinguishable.
fn merge_metrics(inputs: &[PathBuf]) -> Result<Vec<MetricRecord>> {
    let mut merged = Vec::new();
    let mut owner: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (k, path) in inputs.iter().enumerate() {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let records = metrics_from_csv(&text, path)?;
        anyhow::ensure!(
            !records.is_empty(),
            "{} holds no metric rows",
            path.display()
        );
        for mut r in records {
            let key = (r.setting.clone(), r.strategy.clone());
            let first = *owner.entry(key).or_insert(k);
            if first != k {
                r.strategy = format!("{}#{}", r.strategy, k + 1);
            }
            merged.push(r);
        }
    }
    Ok(merged)
}

pub fn compare(inputs: &[PathBuf], out: PathBuf, force: bool) -> Result<()> {
    anyhow::ensure!(!inputs.is_empty(), "no metrics files given");
    let mut outputs = Outputs::new(out, force);
    outputs.check(&["pairwise_mm.csv", "pairwise_m1.csv", "pairwise_m2.csv"])?;
    let records = merge_metrics(inputs)?;
    let mut printed = None;
    for metric in [Metric::Mm, Metric::M1, Metric::M2] {
        let m = pairwise_matrix(&records, metric, DEFAULT_CONFIDENCE)?;
        outputs.add(&format!("pairwise_{}.csv", metric.name()), m.to_csv());
        printed.get_or_insert(m);
    }
    outputs.flush()?;
    let m = printed.expect("three metrics");
    println!(
        "multimodal pairwise matrix ({} settings, confidence {}):",
        m.settings, m.confidence
    );
    print!("{}", m.to_csv());
    Ok(())
}

pub fn attribute_cmd(checkpoint: &Path, dataset: &Path, out: PathBuf, force: bool) -> Result<()> {
    let mut outputs = Outputs::new(out, force);
    outputs.check(&["attributions.csv"])?;
    let model: Model64 = load_checkpoint(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let ds: Dataset64 =
        load_dataset(dataset).with_context(|| format!("loading dataset {}", dataset.display()))?;
    model
        .check_dataset(&ds)
        .context("checkpoint and dataset dimensions disagree")?;
    let mut csv = String::from(
        "index,label,pseudo_label,phi_m1,phi_m2,contribution_m1,contribution_m2,rho,weight_m1,weight_m2,degenerate\n",
    );
    let mut rho_sum = 0.0;
    for (i, s) in ds.samples().iter().enumerate() {
        let a = attribute(&model, s)?;
        rho_sum += a.rho;
        writeln!(
            csv,
            "{i},{},{},{},{},{},{},{},{},{},{}",
            s.label,
            a.pseudo_label,
            a.phi[0],
            a.phi[1],
            a.contribution[0],
            a.contribution[1],
            a.rho,
            a.weights[0],
            a.weights[1],
            a.degenerate
        )
        .unwrap();
    }
    outputs.add("attributions.csv", csv);
    let path = outputs.path("attributions.csv");
    outputs.flush()?;
    println!(
        "wrote {} ({} samples, mean rho {:.4})",
        path.display(),
        ds.len(),
        rho_sum / ds.len() as f64
    );
    Ok(())
}
