//! Synthetic two-modality datasets and the feature-file format.
//!
//! Feature files are UTF-8 CSV with header `label,m1_0,..,m1_{D1-1},m2_0,..,m2_{D2-1}`.
//! A dump written by [`save_dataset`] adds a sidecar `<file>.meta` holding
//! `key=value` lines:
//!
//! ```text
//! # mmal dataset metadata v1
//! samples=4
//! classes=2
//! dim_m1=3
//! dim_m2=2
//! train=0,1,2
//! test=3
//! ```
//!
//! Lines starting with `#` are comments. Index lists are comma separated and may be empty.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeds;

const TEST_FRACTION: f64 = 0.2;
const META_HEADER: &str = "# mmal dataset metadata v1";

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSample<T = f64> {
    pub x_m1: Vec<T>,
    pub x_m2: Vec<T>,
    pub label: usize,
}

/// Labeled two-modality data with a fixed train/test split.
///
/// The dataset plays the oracle in the active-learning loop; strategies only
/// ever read the feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T = f64> {
    samples: Vec<MultimodalSample<T>>,
    num_classes: usize,
    modality_dims: (usize, usize),
    train_indices: Vec<usize>,
    test_indices: Vec<usize>,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset after checking labels, dimensions, finiteness and
    /// split disjointness.
    pub fn new(
        samples: Vec<MultimodalSample<T>>,
        num_classes: usize,
        modality_dims: (usize, usize),
        train_indices: Vec<usize>,
        test_indices: Vec<usize>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::config("num_classes must be positive"));
        }
        if modality_dims.0 == 0 || modality_dims.1 == 0 {
            return Err(Error::config("modality dimensions must be positive"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.label >= num_classes {
                return Err(Error::config(format!(
                    "sample {i}: label {} outside [0, {num_classes})",
                    s.label
                )));
            }
            if s.x_m1.len() != modality_dims.0 || s.x_m2.len() != modality_dims.1 {
                return Err(Error::dim(format!(
                    "sample {i}: feature lengths ({}, {}) != declared {:?}",
                    s.x_m1.len(),
                    s.x_m2.len(),
                    modality_dims
                )));
            }
            if !s.x_m1.iter().chain(&s.x_m2).all(|v| v.is_finite()) {
                return Err(Error::config(format!("sample {i}: non-finite feature")));
            }
        }
        let mut seen = vec![0u8; samples.len()];
        for (set, tag) in [(&train_indices, 1u8), (&test_indices, 2u8)] {
            for &i in set {
                if i >= samples.len() {
                    return Err(Error::config(format!("split index {i} out of range")));
                }
                if seen[i] != 0 {
                    return Err(Error::config(format!(
                        "split index {i} repeated or in both train and test"
                    )));
                }
                seen[i] = tag;
            }
        }
        Ok(Self {
            samples,
            num_classes,
            modality_dims,
            train_indices,
            test_indices,
        })
    }

    pub fn samples(&self) -> &[MultimodalSample<T>] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &MultimodalSample<T> {
        &self.samples[i]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn modality_dims(&self) -> (usize, usize) {
        self.modality_dims
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train_indices
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test_indices
    }

    pub fn label(&self, i: usize) -> usize {
        self.samples[i].label
    }

    /// Per-class sample counts over the whole dataset.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Same data with modality 1 and modality 2 exchanged.
    pub fn swap_modalities(&self) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| MultimodalSample {
                    x_m1: s.x_m2.clone(),
                    x_m2: s.x_m1.clone(),
                    label: s.label,
                })
                .collect(),
            num_classes: self.num_classes,
            modality_dims: (self.modality_dims.1, self.modality_dims.0),
            train_indices: self.train_indices.clone(),
            test_indices: self.test_indices.clone(),
        }
    }
}

/// Parameters of the Gaussian class-cluster generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n: usize,
    pub num_classes: usize,
    pub dim_m1: usize,
    pub dim_m2: usize,
    /// Class-mean norm of modality 1 in units of the noise standard deviation.
    pub snr_m1: f64,
    pub snr_m2: f64,
    /// Fraction of samples whose modality-1 class mean is doubled.
    pub dominant_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            num_classes: 4,
            dim_m1: 16,
            dim_m2: 16,
            snr_m1: 1.0,
            snr_m2: 1.0,
            dominant_fraction: 0.7,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be positive"));
        }
        if self.n < self.num_classes {
            return Err(Error::config(format!(
                "n = {} is smaller than the class count {}",
                self.n, self.num_classes
            )));
        }
        if self.dim_m1 == 0 || self.dim_m2 == 0 {
            return Err(Error::config("modality dimensions must be positive"));
        }
        for (name, v) in [("snr_m1", self.snr_m1), ("snr_m2", self.snr_m2)] {
            if v.is_nan() || v < 0.0 || !v.is_finite() {
                return Err(Error::config(format!(
                    "{name} must be a finite value >= 0, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.dominant_fraction) {
            return Err(Error::config(format!(
                "dominant_fraction must lie in [0, 1], got {}",
                self.dominant_fraction
            )));
        }
        Ok(())
    }
}

fn random_unit_vector(rng: &mut seeds::Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Draws a dataset of Gaussian class clusters.
///
/// Each class owns one random mean direction per modality, scaled to the
/// modality's SNR. For a seeded `dominant_fraction` subset the modality-1 mean
/// is doubled, so those samples are dominated by modality 1.
pub fn generate_synthetic<T: Scalar>(cfg: &SynthConfig) -> Result<Dataset<T>> {
    cfg.validate()?;
    let mut rng = seeds::rng(cfg.seed);
    let k = cfg.num_classes;

    let means_m1: Vec<Vec<f64>> = (0..k)
        .map(|_| random_unit_vector(&mut rng, cfg.dim_m1))
        .collect();
    let means_m2: Vec<Vec<f64>> = (0..k)
        .map(|_| random_unit_vector(&mut rng, cfg.dim_m2))
        .collect();

    let mut labels: Vec<usize> = (0..cfg.n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);

    let n_dominant = (cfg.dominant_fraction * cfg.n as f64).round() as usize;
    let mut order: Vec<usize> = (0..cfg.n).collect();
    order.shuffle(&mut rng);
    let mut dominant = vec![false; cfg.n];
    for &i in &order[..n_dominant.min(cfg.n)] {
        dominant[i] = true;
    }

    let samples = labels
        .iter()
        .zip(&dominant)
        .map(|(&label, &dom)| {
            let scale_m1 = cfg.snr_m1 * if dom { 2.0 } else { 1.0 };
            let x_m1 = means_m1[label]
                .iter()
                .map(|&mu| T::of(scale_m1 * mu + rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let x_m2 = means_m2[label]
                .iter()
                .map(|&mu| T::of(cfg.snr_m2 * mu + rng.sample::<f64, _>(StandardNormal)))
                .collect();
            MultimodalSample { x_m1, x_m2, label }
        })
        .collect();

    let (train, test) = stratified_split(&labels, k, TEST_FRACTION, &mut rng);
    Dataset::new(samples, k, (cfg.dim_m1, cfg.dim_m2), train, test)
}

/// Per-class shuffled split; both index lists come back sorted.
pub fn stratified_split(
    labels: &[usize],
    num_classes: usize,
    test_fraction: f64,
    rng: &mut seeds::Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut train = Vec::with_capacity(labels.len());
    let mut test = Vec::new();
    for mut members in by_class {
        members.shuffle(rng);
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Expected shape of a feature file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    pub dim_m1: usize,
    pub dim_m2: usize,
    /// Class count; inferred as `max label + 1` when absent.
    pub num_classes: Option<usize>,
    /// Seed of the stratified split used when no sidecar metadata exists.
    pub split_seed: u64,
}

impl FeatureSchema {
    pub fn header(&self) -> String {
        feature_header(self.dim_m1, self.dim_m2)
    }

    /// Reads the dimensions from the header line of `path`.
    pub fn infer(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let header = text
            .lines()
            .next()
            .ok_or_else(|| load_err(path, "no samples"))?;
        let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        if cols.first() != Some(&"label") {
            return Err(load_err(path, "header must start with `label`"));
        }
        let dim_m1 = cols.iter().filter(|c| c.starts_with("m1_")).count();
        let dim_m2 = cols.iter().filter(|c| c.starts_with("m2_")).count();
        let schema = Self {
            dim_m1,
            dim_m2,
            num_classes: None,
            split_seed: 0,
        };
        if schema.header() != cols.join(",") {
            return Err(load_err(
                path,
                format!("unexpected header `{}`", header.trim()),
            ));
        }
        Ok(schema)
    }
}

pub fn feature_header(dim_m1: usize, dim_m2: usize) -> String {
    let mut h = String::from("label");
    for i in 0..dim_m1 {
        write!(h, ",m1_{i}").unwrap();
    }
    for i in 0..dim_m2 {
        write!(h, ",m2_{i}").unwrap();
    }
    h
}

fn load_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn row_err(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::LoadRow {
        path: path.to_path_buf(),
        row,
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| load_err(path, e.to_string()))
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta");
    PathBuf::from(os)
}

/// Parses a feature file. Row numbers in errors are 1-based file lines
/// (the header is line 1). When a sidecar `.meta` file exists its split and
/// class count are used; otherwise a stratified 80/20 split is drawn from
/// `schema.split_seed`.
pub fn load_features<T: Scalar>(path: &Path, schema: &FeatureSchema) -> Result<Dataset<T>> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let expected = schema.header();
    match lines.next() {
        None => return Err(load_err(path, "no samples")),
        Some((_, h)) => {
            let h: Vec<&str> = h.trim().split(',').map(str::trim).collect();
            if h.join(",") != expected {
                return Err(row_err(
                    path,
                    1,
                    "header does not match the declared dimensions",
                ));
            }
        }
    }
    let width = 1 + schema.dim_m1 + schema.dim_m2;
    let mut samples = Vec::new();
    for (lineno, line) in lines {
        let row = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(row_err(
                path,
                row,
                format!("expected {width} columns, found {}", fields.len()),
            ));
        }
        let label: usize = fields[0]
            .parse()
            .map_err(|_| row_err(path, row, format!("invalid label `{}`", fields[0])))?;
        let mut values = Vec::with_capacity(width - 1);
        for (c, f) in fields[1..].iter().enumerate() {
            let v: T = f.parse().map_err(|_| {
                row_err(path, row, format!("column {}: invalid number `{f}`", c + 2))
            })?;
            if !v.is_finite() {
                return Err(row_err(
                    path,
                    row,
                    format!("column {}: non-finite value", c + 2),
                ));
            }
            values.push(v);
        }
        let x_m2 = values.split_off(schema.dim_m1);
        samples.push(MultimodalSample {
            x_m1: values,
            x_m2,
            label,
        });
    }
    if samples.is_empty() {
        return Err(load_err(path, "no samples"));
    }

    let max_label = samples.iter().map(|s| s.label).max().unwrap_or(0);
    let mut num_classes = schema.num_classes.unwrap_or(max_label + 1);
    if max_label >= num_classes {
        let row = samples.iter().position(|s| s.label >= num_classes).unwrap() + 2;
        return Err(row_err(
            path,
            row,
            format!("label outside [0, {num_classes})"),
        ));
    }

    let meta = meta_path(path);
    let (train, test) = if meta.exists() {
        let m = read_meta(&meta)?;
        if m.samples != samples.len() || m.dim_m1 != schema.dim_m1 || m.dim_m2 != schema.dim_m2 {
            return Err(load_err(&meta, "metadata disagrees with the feature file"));
        }
        if m.classes < num_classes {
            return Err(load_err(
                &meta,
                "metadata class count below observed labels",
            ));
        }
        num_classes = m.classes;
        (m.train, m.test)
    } else {
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        stratified_split(
            &labels,
            num_classes,
            TEST_FRACTION,
            &mut seeds::rng(schema.split_seed),
        )
    };
    Dataset::new(
        samples,
        num_classes,
        (schema.dim_m1, schema.dim_m2),
        train,
        test,
    )
}

/// Loads a dataset, inferring dimensions from the header.
pub fn load_dataset<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let schema = FeatureSchema::infer(path)?;
    load_features(path, &schema)
}

struct Meta {
    samples: usize,
    classes: usize,
    dim_m1: usize,
    dim_m2: usize,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn read_meta(path: &Path) -> Result<Meta> {
    let text = read_text(path)?;
    let mut kv = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| row_err(path, i + 1, "expected key=value"))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        kv.get(k)
            .ok_or_else(|| load_err(path, format!("missing key `{k}`")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| load_err(path, format!("key `{k}` is not an integer")))
    };
    let list = |k: &str| -> Result<Vec<usize>> {
        let v = get(k)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| load_err(path, format!("key `{k}`: bad index `{s}`")))
            })
            .collect()
    };
    Ok(Meta {
        samples: num("samples")?,
        classes: num("classes")?,
        dim_m1: num("dim_m1")?,
        dim_m2: num("dim_m2")?,
        train: list("train")?,
        test: list("test")?,
    })
}

fn join_indices(idx: &[usize]) -> String {
    idx.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Writes the feature CSV and its `.meta` sidecar.
pub fn save_dataset<T: Scalar>(ds: &Dataset<T>, path: &Path) -> Result<()> {
    let (d1, d2) = ds.modality_dims;
    let mut out = feature_header(d1, d2);
    out.push('\n');
    for s in &ds.samples {
        write!(out, "{}", s.label).unwrap();
        for v in s.x_m1.iter().chain(&s.x_m2) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)?;

    let meta = format!(
        "{META_HEADER}\nsamples={}\nclasses={}\ndim_m1={d1}\ndim_m2={d2}\ntrain={}\ntest={}\n",
        ds.samples.len(),
        ds.num_classes,
        join_indices(&ds.train_indices),
        join_indices(&ds.test_indices),
    );
    fs::write(meta_path(path), meta)?;
    Ok(())
}
