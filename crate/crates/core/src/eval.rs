//! Analysis statistics: contribution curves, dominated-subset weights,
//! significance testing, pairwise win matrices and per-class deltas.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{attribute_forward, AttributionResult};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::{argmax, Scalar};
use crate::stats::t_critical_two_sided;

/// Significance level used for strategy comparisons.
pub const DEFAULT_CONFIDENCE: f64 = 0.9;

/// Per-sample attributions over `indices`, in index order.
pub fn attributions<T: Scalar>(
    model: &ModelParams<T>,
    dataset: &Dataset<T>,
    indices: &[usize],
) -> Result<Vec<AttributionResult<T>>> {
    model.check_dataset(dataset)?;
    Ok(indices
        .par_iter()
        .map(|&i| attribute_forward(model, &model.forward_unchecked(dataset.sample(i))))
        .collect())
}

/// Mean modality contribution `(Φ̄_m1, Φ̄_m2)` over `indices`.
pub fn mean_contribution<T: Scalar>(
    model: &ModelParams<T>,
    dataset: &Dataset<T>,
    indices: &[usize],
) -> Result<[f64; 2]> {
    if indices.is_empty() {
        return Err(Error::Empty("contribution indices"));
    }
    let attrs = attributions(model, dataset, indices)?;
    Ok(mean_of_contributions(&attrs))
}

pub fn mean_of_contributions<T: Scalar>(attrs: &[AttributionResult<T>]) -> [f64; 2] {
    let n = attrs.len() as f64;
    let mut acc = [0.0; 2];
    for a in attrs {
        acc[0] += a.contribution[0].as_f64();
        acc[1] += a.contribution[1].as_f64();
    }
    [acc[0] / n, acc[1] / n]
}

/// Summary of the samples dominated by one modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubsetSummary {
    pub count: usize,
    pub mean_rho: f64,
    /// Mean weight applied to the other (non-dominant) modality, `1 - rho`.
    pub mean_other_weight: f64,
}

/// Partition of samples by their dominant modality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominatedSubsetStats {
    /// Entry `i` summarises samples where modality `i` contributes most;
    /// `None` when no sample falls in that subset.
    pub subsets: [Option<SubsetSummary>; 2],
    /// Mean contribution over all samples.
    pub mean_contribution: [f64; 2],
}

impl DominatedSubsetStats {
    /// Modality with the larger mean contribution (modality 1 on ties).
    pub fn stronger(&self) -> usize {
        argmax(&self.mean_contribution).unwrap_or(0)
    }

    pub fn weaker(&self) -> usize {
        1 - self.stronger()
    }
}

pub fn dominated_subset_stats<T: Scalar>(attrs: &[AttributionResult<T>]) -> DominatedSubsetStats {
    let mut count = [0usize; 2];
    let mut rho = [0.0f64; 2];
    let mut weight = [0.0f64; 2];
    for a in attrs {
        let d = a.dominant();
        count[d] += 1;
        rho[d] += a.rho.as_f64();
        weight[d] += a.weights[1 - d].as_f64();
    }
    let subsets = [0, 1].map(|d| {
        (count[d] > 0).then(|| SubsetSummary {
            count: count[d],
            mean_rho: rho[d] / count[d] as f64,
            mean_other_weight: weight[d] / count[d] as f64,
        })
    });
    let mean_contribution = if attrs.is_empty() {
        [0.0; 2]
    } else {
        mean_of_contributions(attrs)
    };
    DominatedSubsetStats {
        subsets,
        mean_contribution,
    }
}

/// Outcome of Welch's two-sided test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub critical: f64,
    pub significant: bool,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance t test at the given two-sided confidence.
///
/// Degrees of freedom follow Welch–Satterthwaite. Two zero-variance samples
/// with equal means give `t = 0`; with different means `t` is infinite and
/// the difference is significant.
pub fn welch_ttest(a: &[f64], b: &[f64], confidence: f64) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::config(
            "welch test needs at least two observations per sample",
        ));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::config(format!(
            "confidence {confidence} outside (0, 1)"
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    let diff = ma - mb;
    let (t, df) = if se2 == 0.0 {
        let t = if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        };
        (t, na + nb - 2.0)
    } else {
        let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
        (diff / se2.sqrt(), df)
    };
    let critical = t_critical_two_sided(1.0 - confidence, df.max(1.0));
    Ok(TTest {
        t,
        df,
        critical,
        significant: t.abs() > critical,
    })
}

/// One row of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub setting: String,
    pub strategy: String,
    pub repetition: usize,
    pub round: usize,
    pub labeled: usize,
    pub mm_top1: f64,
    pub m1_top1: f64,
    pub m2_top1: f64,
    pub phi_m1: f64,
    pub phi_m2: f64,
}

pub const METRICS_HEADER: &str =
    "setting,strategy,repetition,round,labeled,mm_top1,m1_top1,m2_top1,phi_m1,phi_m2";

pub fn metrics_to_csv(records: &[MetricRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.setting,
            r.strategy,
            r.repetition,
            r.round,
            r.labeled,
            r.mm_top1,
            r.m1_top1,
            r.m2_top1,
            r.phi_m1,
            r.phi_m2
        )
        .unwrap();
    }
    out
}

pub fn metrics_from_csv(text: &str, path: &Path) -> Result<Vec<MetricRecord>> {
    let row_err = |row: usize, message: String| Error::LoadRow {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => return Err(row_err(1, "missing metrics header".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(row_err(
                row,
                format!("expected 10 columns, found {}", f.len()),
            ));
        }
        let int = |j: usize| -> Result<usize> {
            f[j].parse()
                .map_err(|_| row_err(row, format!("bad integer `{}`", f[j])))
        };
        let real = |j: usize| -> Result<f64> {
            f[j].parse()
                .map_err(|_| row_err(row, format!("bad number `{}`", f[j])))
        };
        out.push(MetricRecord {
            setting: f[0].to_string(),
            strategy: f[1].to_string(),
            repetition: int(2)?,
            round: int(3)?,
            labeled: int(4)?,
            mm_top1: real(5)?,
            m1_top1: real(6)?,
            m2_top1: real(7)?,
            phi_m1: real(8)?,
            phi_m2: real(9)?,
        });
    }
    Ok(out)
}

/// Accuracy column compared by a pairwise matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mm,
    M1,
    M2,
}

impl Metric {
    pub fn of(self, r: &MetricRecord) -> f64 {
        match self {
            Metric::Mm => r.mm_top1,
            Metric::M1 => r.m1_top1,
            Metric::M2 => r.m2_top1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mm => "mm",
            Metric::M1 => "m1",
            Metric::M2 => "m2",
        }
    }
}

/// `p[i][j]`: number of settings' worth of rounds in which strategy `i`
/// significantly beat strategy `j`, each round weighing `1 / L`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseMatrix {
    pub strategies: Vec<String>,
    pub p: Vec<Vec<f64>>,
    pub settings: usize,
    pub confidence: f64,
}

impl PairwiseMatrix {
    /// Mean of each column over the other strategies (lower is better).
    pub fn column_average(&self) -> Vec<f64> {
        let n = self.strategies.len();
        (0..n)
            .map(|j| {
                if n < 2 {
                    return 0.0;
                }
                (0..n)
                    .filter(|&i| i != j)
                    .map(|i| self.p[i][j])
                    .sum::<f64>()
                    / (n - 1) as f64
            })
            .collect()
    }

    /// CSV with a `strategy` header, one row per strategy and a final
    /// `average` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy");
        for s in &self.strategies {
            write!(out, ",{s}").unwrap();
        }
        out.push('\n');
        for (s, row) in self.strategies.iter().zip(&self.p) {
            out.push_str(s);
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out.push_str("average");
        for v in self.column_average() {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
        out
    }
}

/// Builds the pairwise win matrix from per-repetition metric records.
///
/// Within each setting every strategy must cover the same rounds. For each
/// round, repetitions form the samples of a Welch test; a significant win with
/// the higher mean adds `1 / L` to that ordered pair, `L` being the setting's
/// round count.
pub fn pairwise_matrix(
    records: &[MetricRecord],
    metric: Metric,
    confidence: f64,
) -> Result<PairwiseMatrix> {
    let mut strategies: Vec<String> = Vec::new();
    let mut settings: Vec<String> = Vec::new();
    for r in records {
        if !strategies.contains(&r.strategy) {
            strategies.push(r.strategy.clone());
        }
        if !settings.contains(&r.setting) {
            settings.push(r.setting.clone());
        }
    }
    let n = strategies.len();
    let mut p = vec![vec![0.0; n]; n];
    for setting in &settings {
        // strategy -> round -> values across repetitions
        let mut table: Vec<BTreeMap<usize, Vec<f64>>> = vec![BTreeMap::new(); n];
        for r in records.iter().filter(|r| &r.setting == setting) {
            let s = strategies.iter().position(|x| x == &r.strategy).unwrap();
            table[s].entry(r.round).or_default().push(metric.of(r));
        }
        let present: Vec<usize> = (0..n).filter(|&s| !table[s].is_empty()).collect();
        let rounds: Vec<usize> = table[present[0]].keys().copied().collect();
        for &s in &present {
            let other: Vec<usize> = table[s].keys().copied().collect();
            if other != rounds {
                return Err(Error::RoundMismatch(format!(
                    "setting `{setting}`: strategy `{}` has rounds {other:?}, `{}` has {rounds:?}",
                    strategies[s], strategies[present[0]]
                )));
            }
        }
        let mut wins = vec![vec![0usize; n]; n];
        for round in &rounds {
            for &i in &present {
                for &j in &present {
                    if i == j {
                        continue;
                    }
                    let (a, b) = (&table[i][round], &table[j][round]);
                    let test = welch_ttest(a, b, confidence)?;
                    if test.significant && test.t > 0.0 {
                        wins[i][j] += 1;
                    }
                }
            }
        }
        let l = rounds.len() as f64;
        for i in 0..n {
            for j in 0..n {
                p[i][j] += wins[i][j] as f64 / l;
            }
        }
    }
    Ok(PairwiseMatrix {
        strategies,
        p,
        settings: settings.len(),
        confidence,
    })
}

/// Accuracy difference `a - b` for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassDelta {
    pub class: usize,
    pub count: usize,
    pub mm: f64,
    pub m1: f64,
    pub m2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClasswiseDelta {
    /// Sorted by multimodal delta, largest improvement first (class index on ties).
    pub classes: Vec<ClassDelta>,
    /// Classes without any sample in the evaluated indices.
    pub excluded: Vec<usize>,
}

/// Per-class accuracy deltas between two models on `indices`.
pub fn classwise_delta<T: Scalar>(
    model_a: &ModelParams<T>,
    model_b: &ModelParams<T>,
    dataset: &Dataset<T>,
    indices: &[usize],
) -> Result<ClasswiseDelta> {
    if indices.is_empty() {
        return Err(Error::Empty("classwise indices"));
    }
    model_a.check_dataset(dataset)?;
    model_b.check_dataset(dataset)?;
    let k = dataset.num_classes();
    let mut count = vec![0usize; k];
    let mut hits = vec![[0i64; 3]; k];
    for &i in indices {
        let s = dataset.sample(i);
        count[s.label] += 1;
        for (model, sign) in [(model_a, 1i64), (model_b, -1i64)] {
            let fw = model.forward_unchecked(s);
            for (h, f) in hits[s.label].iter_mut().zip([&fw.f_mm, &fw.f_m1, &fw.f_m2]) {
                if argmax(f) == Some(s.label) {
                    *h += sign;
                }
            }
        }
    }
    let mut classes = Vec::new();
    let mut excluded = Vec::new();
    for c in 0..k {
        if count[c] == 0 {
            excluded.push(c);
            continue;
        }
        let n = count[c] as f64;
        classes.push(ClassDelta {
            class: c,
            count: count[c],
            mm: hits[c][0] as f64 / n,
            m1: hits[c][1] as f64 / n,
            m2: hits[c][2] as f64 / n,
        });
    }
    classes.sort_by(|a, b| {
        b.mm.partial_cmp(&a.mm)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.class.cmp(&b.class))
    });
    Ok(ClasswiseDelta { classes, excluded })
}
