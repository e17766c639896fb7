#![allow(dead_code)]

use mmal::alloop::{DatasetSource, ExperimentConfig};
use mmal::datagen::{MultimodalSample, SynthConfig};
use mmal::model::{init_model, Fusion, ModelDims, ModelParams, TrainConfig};
use mmal::seeds::Rng;
use mmal::strategies::Strategy;
use rand::Rng as _;

/// Model with every weight and bias drawn uniformly from `[-scale, scale]`.
pub fn random_model(rng: &mut Rng, dims: ModelDims, fusion: Fusion, scale: f64) -> ModelParams {
    let mut m: ModelParams = init_model(dims, fusion, rng.random()).unwrap();
    for t in m.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
    m
}

pub fn random_sample(rng: &mut Rng, d1: usize, d2: usize, k: usize) -> MultimodalSample {
    MultimodalSample {
        x_m1: (0..d1).map(|_| rng.random_range(-2.0..2.0)).collect(),
        x_m2: (0..d2).map(|_| rng.random_range(-2.0..2.0)).collect(),
        label: rng.random_range(0..k),
    }
}

/// Random small architecture: dims in 1..=6, K in 2..=5, optional hidden layers.
pub fn random_dims(rng: &mut Rng, fusion: Fusion, allow_hidden: bool) -> ModelDims {
    let k = rng.random_range(2..=5);
    let d1 = rng.random_range(1..=6);
    let d2 = rng.random_range(1..=6);
    let mut h1 = (allow_hidden && rng.random_bool(0.5)).then(|| rng.random_range(1..=6));
    let mut h2 = (allow_hidden && rng.random_bool(0.5)).then(|| rng.random_range(1..=6));
    if fusion == Fusion::Sum {
        // sum fusion needs equal encoded widths
        let w = rng.random_range(1..=6);
        h1 = Some(w);
        h2 = Some(w);
        if !allow_hidden {
            return ModelDims::identity(w, w, k);
        }
    }
    ModelDims {
        input_m1: d1,
        input_m2: d2,
        hidden_m1: h1,
        hidden_m2: h2,
        num_classes: k,
    }
}

/// Synthetic dominant dataset used by the directional checks.
pub fn dominant_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        n: 2000,
        num_classes: 4,
        dim_m1: 16,
        dim_m2: 16,
        snr_m1: 1.5,
        snr_m2: 1.5,
        dominant_fraction: 0.7,
        seed,
    }
}

pub fn experiment(strategy: Strategy, synth: SynthConfig, master_seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        setting: "synthetic".into(),
        dataset: DatasetSource::Synthetic(synth),
        strategy,
        initial_budget: 100,
        round_budget: 50,
        rounds: 5,
        train: TrainConfig::default(),
        fusion: Fusion::Concat,
        hidden_m1: None,
        hidden_m2: None,
        split: 1,
        master_seed,
    }
}

/// `|a - b| / max(|a|, |b|)`, or the absolute gap when both are tiny.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Dataset whose two modalities are identical, with a concat model whose
/// two head blocks are identical: every sample has `rho = 0` exactly.
pub fn mirrored_fixture(n: usize, d: usize, k: usize, seed: u64) -> (mmal::Dataset64, ModelParams) {
    let mut rng = mmal::seeds::rng(seed);
    let samples: Vec<MultimodalSample> = (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            MultimodalSample {
                x_m1: x.clone(),
                x_m2: x,
                label: i % k,
            }
        })
        .collect();
    let train: Vec<usize> = (0..n).filter(|i| i % 5 != 0).collect();
    let test: Vec<usize> = (0..n).filter(|i| i % 5 == 0).collect();
    let ds = mmal::Dataset64::new(samples, k, (d, d), train, test).unwrap();
    let mut model = random_model(&mut rng, ModelDims::identity(d, d, k), Fusion::Concat, 1.0);
    for r in 0..k {
        for c in 0..d {
            let w = model.head_mm.weight.get(r, c);
            model.head_mm.weight.set(r, d + c, w);
        }
    }
    (ds, model)
}
