//! Batch acquisition strategies.
//!
//! Every strategy returns exactly `budget` distinct indices drawn from the
//! request's unlabeled pool, deterministically for a given seed.

use std::collections::HashSet;
use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::AttributionResult;
use crate::datagen::Dataset;
use crate::embedding::embed_pool;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::ModelParams;
use crate::scalar::{argmax, squared_distance, squared_norm, Scalar};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Entropy,
    #[serde(rename = "coreset")]
    CoreSet,
    Badge,
    Bmmal,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Random,
        Strategy::Entropy,
        Strategy::CoreSet,
        Strategy::Badge,
        Strategy::Bmmal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::CoreSet => "coreset",
            Strategy::Badge => "badge",
            Strategy::Bmmal => "bmmal",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRequest {
    pub unlabeled: Vec<usize>,
    pub labeled: Vec<usize>,
    pub budget: usize,
    pub seed: u64,
    pub strategy: Strategy,
    /// Number of sub-pools; must divide `budget`.
    pub split: usize,
}

impl QueryRequest {
    pub fn new(
        strategy: Strategy,
        unlabeled: Vec<usize>,
        labeled: Vec<usize>,
        budget: usize,
        seed: u64,
    ) -> Self {
        Self {
            unlabeled,
            labeled,
            budget,
            seed,
            strategy,
            split: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::query("budget must be positive"));
        }
        if self.budget > self.unlabeled.len() {
            return Err(Error::query(format!(
                "budget {} exceeds the {} unlabeled samples",
                self.budget,
                self.unlabeled.len()
            )));
        }
        if self.split == 0 || self.split > self.budget || !self.budget.is_multiple_of(self.split) {
            return Err(Error::config(format!(
                "split {} must be in [1, budget] and divide the budget {}",
                self.split, self.budget
            )));
        }
        let pool: HashSet<usize> = self.unlabeled.iter().copied().collect();
        if pool.len() != self.unlabeled.len() {
            return Err(Error::query("unlabeled pool contains duplicates"));
        }
        if let Some(i) = self.labeled.iter().find(|i| pool.contains(i)) {
            return Err(Error::query(format!(
                "index {i} is both labeled and unlabeled"
            )));
        }
        Ok(())
    }
}

/// Per-selection diagnostics; `score` is strategy specific (entropy,
/// cover distance or embedding norm).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleDiagnostics<T = f64> {
    pub index: usize,
    pub score: T,
    pub attribution: Option<AttributionResult<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult<T = f64> {
    /// Selected dataset indices in pick order.
    pub selected: Vec<usize>,
    /// Aligned with `selected`.
    pub diagnostics: Vec<SampleDiagnostics<T>>,
    /// D² seeding ran out of mass and fell back to uniform picks.
    pub degenerate_seeding: bool,
    /// Largest number of scalars held at once in the representation buffer.
    pub peak_buffer: usize,
}

impl<T> QueryResult<T> {
    fn from_picks(picks: Vec<(usize, T)>, peak_buffer: usize) -> Self {
        let (selected, diagnostics) = picks
            .into_iter()
            .map(|(index, score)| {
                (
                    index,
                    SampleDiagnostics {
                        index,
                        score,
                        attribution: None,
                    },
                )
            })
            .unzip();
        Self {
            selected,
            diagnostics,
            degenerate_seeding: false,
            peak_buffer,
        }
    }
}

pub fn select_random<T: Scalar>(req: &QueryRequest) -> Result<QueryResult<T>> {
    req.validate()?;
    let mut rng = seeds::rng(req.seed);
    let picks = rand::seq::index::sample(&mut rng, req.unlabeled.len(), req.budget)
        .into_iter()
        .map(|j| (req.unlabeled[j], T::zero()))
        .collect();
    Ok(QueryResult::from_picks(picks, 0))
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy<T: Scalar>(p: &[T]) -> T {
    -p.iter()
        .filter(|&&v| v > T::zero())
        .map(|&v| v * v.ln())
        .sum::<T>()
}

/// Top-`budget` by multimodal predictive entropy; ties go to the lower index.
pub fn select_entropy<T: Scalar>(
    req: &QueryRequest,
    model: &ModelParams<T>,
    dataset: &Dataset<T>,
) -> Result<QueryResult<T>> {
    req.validate()?;
    model.check_dataset(dataset)?;
    let mut scored: Vec<(usize, T)> = req
        .unlabeled
        .par_iter()
        .map(|&i| (i, entropy(&model.forward_unchecked(dataset.sample(i)).p_mm)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    scored.truncate(req.budget);
    Ok(QueryResult::from_picks(scored, req.unlabeled.len()))
}

fn fused_features<T: Scalar>(
    model: &ModelParams<T>,
    dataset: &Dataset<T>,
    idx: &[usize],
) -> Matrix<T> {
    let dim = model.dims.fused_dim(model.fusion);
    let rows: Vec<Vec<T>> = idx
        .par_iter()
        .map(|&i| model.forward_unchecked(dataset.sample(i)).z_mm)
        .collect();
    let mut data = Vec::with_capacity(idx.len() * dim);
    rows.iter().for_each(|r| data.extend_from_slice(r));
    Matrix::from_vec(idx.len(), dim, data)
}

/// Greedy k-center cover over `points` given already-covered `centers`.
///
/// Returns `(row, distance to nearest center at pick time)` per pick. With no
/// centers, the first pick is the largest-norm row.
pub fn k_center_greedy<T: Scalar>(
    points: &Matrix<T>,
    centers: &Matrix<T>,
    budget: usize,
) -> Vec<(usize, T)> {
    let n = points.rows();
    let mut min_d2: Vec<T> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..centers.rows())
                .map(|c| squared_distance(points.row(i), centers.row(c)))
                .fold(T::infinity(), T::min)
        })
        .collect();
    let mut taken = vec![false; n];
    let mut picks = Vec::with_capacity(budget);
    for step in 0..budget.min(n) {
        let pick = if step == 0 && centers.rows() == 0 {
            let norms: Vec<T> = (0..n).map(|i| squared_norm(points.row(i))).collect();
            argmax(&norms).expect("non-empty pool")
        } else {
            let mut best: Option<(usize, T)> = None;
            for (i, &d) in min_d2.iter().enumerate() {
                if taken[i] {
                    continue;
                }
                if best.is_none_or(|(_, b)| d > b) {
                    best = Some((i, d));
                }
            }
            best.expect("budget within pool").0
        };
        let score = if min_d2[pick].is_finite() {
            min_d2[pick].sqrt()
        } else {
            squared_norm(points.row(pick)).sqrt()
        };
        taken[pick] = true;
        picks.push((pick, score));
        let center = points.row(pick).to_vec();
        min_d2
            .par_iter_mut()
            .enumerate()
            .with_min_len(512)
            .for_each(|(i, d)| {
                let nd = squared_distance(points.row(i), &center);
                if nd < *d {
                    *d = nd;
                }
            });
    }
    picks
}

/// CoreSet: greedy k-center over fused features (Euclidean).
pub fn select_coreset<T: Scalar>(
    req: &QueryRequest,
    model: &ModelParams<T>,
    dataset: &Dataset<T>,
) -> Result<QueryResult<T>> {
    req.validate()?;
    model.check_dataset(dataset)?;
    let points = fused_features(model, dataset, &req.unlabeled);
    let centers = fused_features(model, dataset, &req.labeled);
    let buffer = points.as_slice().len() + centers.as_slice().len();
    let picks = k_center_greedy(&points, &centers, req.budget)
        .into_iter()
        .map(|(row, d)| (req.unlabeled[row], d))
        .collect();
    Ok(QueryResult::from_picks(picks, buffer))
}

/// Result of k-means++ seeding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeding {
    /// Row indices in pick order.
    pub rows: Vec<usize>,
    /// Some picks were uniform because every remaining row coincided with a center.
    pub degenerate: bool,
}

/// k-means++ seeding over the rows of `embeddings`.
///
/// The first center is the largest-norm row (lowest index on ties); each later
/// center is drawn with probability proportional to its squared distance to the
/// nearest chosen center. When that mass is zero the pick is uniform over the
/// rows not yet chosen and the result is flagged degenerate.
pub fn kmeanspp_seed<T: Scalar>(
    embeddings: &Matrix<T>,
    budget: usize,
    seed: u64,
) -> Result<Seeding> {
    let n = embeddings.rows();
    if budget > n {
        return Err(Error::query(format!(
            "budget {budget} exceeds {n} embeddings"
        )));
    }
    let mut rows = Vec::with_capacity(budget);
    if budget == 0 {
        return Ok(Seeding {
            rows,
            degenerate: false,
        });
    }
    let mut rng = seeds::rng(seed);
    let norms: Vec<T> = (0..n).map(|i| squared_norm(embeddings.row(i))).collect();
    let first = argmax(&norms).expect("non-empty embeddings");
    let mut chosen = vec![false; n];
    let mut min_d2 = vec![T::infinity(); n];
    let mut degenerate = false;
    let mut next = first;
    loop {
        chosen[next] = true;
        rows.push(next);
        if rows.len() == budget {
            break;
        }
        let center = embeddings.row(next).to_vec();
        min_d2
            .par_iter_mut()
            .enumerate()
            .with_min_len(512)
            .for_each(|(i, d)| {
                let nd = squared_distance(embeddings.row(i), &center);
                if nd < *d {
                    *d = nd;
                }
            });
        let total: f64 = (0..n)
            .filter(|&i| !chosen[i])
            .map(|i| min_d2[i].as_f64())
            .sum();
        next = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for i in (0..n).filter(|&i| !chosen[i]) {
                let w = min_d2[i].as_f64();
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive mass implies a candidate")
        } else {
            degenerate = true;
            let remaining = n - rows.len();
            let r = rng.random_range(0..remaining);
            (0..n)
                .filter(|&i| !chosen[i])
                .nth(r)
                .expect("remaining rows")
        };
    }
    Ok(Seeding { rows, degenerate })
}

fn select_by_embedding<T: Scalar>(
    req: &QueryRequest,
    model: &ModelParams<T>,
    dataset: &Dataset<T>,
    modulate: bool,
) -> Result<QueryResult<T>> {
    req.validate()?;
    let pool = embed_pool(model, dataset, &req.unlabeled, modulate)?;
    let seeding = kmeanspp_seed(&pool.matrix, req.budget, req.seed)?;
    let mut result = QueryResult::from_picks(
        seeding
            .rows
            .iter()
            .map(|&r| (req.unlabeled[r], squared_norm(pool.matrix.row(r)).sqrt()))
            .collect(),
        pool.matrix.as_slice().len(),
    );
    if let Some(attrs) = &pool.attributions {
        for (diag, &r) in result.diagnostics.iter_mut().zip(&seeding.rows) {
            diag.attribution = Some(attrs[r]);
        }
    }
    result.degenerate_seeding = seeding.degenerate;
    Ok(result)
}

/// BADGE: k-means++ seeding over plain gradient embeddings.
pub fn select_badge<T: Scalar>(
    req: &QueryRequest,
    model: &ModelParams<T>,
    dataset: &Dataset<T>,
) -> Result<QueryResult<T>> {
    select_by_embedding(req, model, dataset, false)
}

/// BMMAL: k-means++ seeding over Shapley-modulated gradient embeddings.
pub fn select_bmmal<T: Scalar>(
    req: &QueryRequest,
    model: &ModelParams<T>,
    dataset: &Dataset<T>,
) -> Result<QueryResult<T>> {
    select_by_embedding(req, model, dataset, true)
}

/// Runs `strategy_fn` on `split` disjoint sub-pools with budget `budget / split`
/// each and concatenates the picks.
///
/// The pool is shuffled from the request seed and cut into contiguous chunks
/// whose sizes differ by at most one. `split == 1` forwards the request
/// untouched.
pub fn split_pool_query<T, F>(req: &QueryRequest, mut strategy_fn: F) -> Result<QueryResult<T>>
where
    F: FnMut(&QueryRequest) -> Result<QueryResult<T>>,
{
    req.validate()?;
    if req.split == 1 {
        return strategy_fn(req);
    }
    let s = req.split;
    let per_chunk = req.budget / s;
    let mut pool = req.unlabeled.clone();
    {
        use rand::seq::SliceRandom;
        pool.shuffle(&mut seeds::rng(seeds::derive(
            req.seed,
            &[seeds::stream::SPLIT_CHUNK],
        )));
    }
    let base = pool.len() / s;
    let extra = pool.len() % s;
    let mut out = QueryResult {
        selected: Vec::with_capacity(req.budget),
        diagnostics: Vec::with_capacity(req.budget),
        degenerate_seeding: false,
        peak_buffer: 0,
    };
    let mut start = 0;
    for c in 0..s {
        let len = base + usize::from(c < extra);
        let chunk = pool[start..start + len].to_vec();
        start += len;
        if chunk.len() < per_chunk {
            return Err(Error::query(format!(
                "sub-pool {c} holds {} samples, fewer than its budget {per_chunk}",
                chunk.len()
            )));
        }
        let sub = QueryRequest {
            unlabeled: chunk,
            labeled: req.labeled.clone(),
            budget: per_chunk,
            seed: seeds::derive(req.seed, &[seeds::stream::SPLIT_CHUNK, c as u64 + 1]),
            strategy: req.strategy,
            split: 1,
        };
        let part = strategy_fn(&sub)?;
        if part.selected.len() != per_chunk {
            return Err(Error::query(format!(
                "sub-pool {c} returned {} picks instead of {per_chunk}",
                part.selected.len()
            )));
        }
        out.selected.extend(part.selected);
        out.diagnostics.extend(part.diagnostics);
        out.degenerate_seeding |= part.degenerate_seeding;
        out.peak_buffer = out.peak_buffer.max(part.peak_buffer);
    }
    Ok(out)
}

/// Dispatches `req.strategy`, honouring `req.split`.
pub fn query<T: Scalar>(
    req: &QueryRequest,
    model: &ModelParams<T>,
    dataset: &Dataset<T>,
) -> Result<QueryResult<T>> {
    split_pool_query(req, |r| match r.strategy {
        Strategy::Random => select_random(r),
        Strategy::Entropy => select_entropy(r, model, dataset),
        Strategy::CoreSet => select_coreset(r, model, dataset),
        Strategy::Badge => select_badge(r, model, dataset),
        Strategy::Bmmal => select_bmmal(r, model, dataset),
    })
}

/// One line of the selection log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub setting: String,
    pub repetition: usize,
    pub round: usize,
    pub strategy: Strategy,
    pub sample: usize,
    pub score: f64,
    pub phi_m1: f64,
    pub phi_m2: f64,
    pub rho: f64,
}

/// Writes records as newline-delimited JSON.
pub fn write_selection_log<W: Write>(mut out: W, records: &[SelectionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_selection_log(text: &str) -> Result<Vec<SelectionRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
