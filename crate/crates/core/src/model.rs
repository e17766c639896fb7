//! Two-encoder late-fusion classifier with unimodal and multimodal heads.
//!
//! ```text
//! x_m1 -> enc_m1 -> z_m1 -> head_m1 -> f_m1
//! x_m2 -> enc_m2 -> z_m2 -> head_m2 -> f_m2
//!                  z_mm = fuse(z_m1, z_m2) -> head_mm -> f_mm
//! ```
//!
//! The training objective is the mean of the three cross-entropies.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, MultimodalSample};
use crate::error::{Error, Result};
use crate::linalg::{axpy_vec, Matrix};
use crate::scalar::{argmax, Scalar};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    #[default]
    Concat,
    Sum,
}

impl Fusion {
    pub fn name(self) -> &'static str {
        match self {
            Fusion::Concat => "concat",
            Fusion::Sum => "sum",
        }
    }
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "concat" | "concatenation" => Ok(Fusion::Concat),
            "sum" | "summation" => Ok(Fusion::Sum),
            other => Err(Error::config(format!("unknown fusion `{other}`"))),
        }
    }
}

/// Affine layer `W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T = f64> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![T::zero(); out_dim],
        }
    }

    fn init(out_dim: usize, in_dim: usize, rng: &mut seeds::Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let data = (0..out_dim * in_dim)
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        Self {
            weight: Matrix::from_vec(out_dim, in_dim, data),
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = self.weight.mul_vec(x);
        axpy_vec(&mut y, T::one(), &self.bias);
        y
    }
}

/// Per-modality feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoder<T = f64> {
    /// Raw features pass through unchanged.
    Identity,
    /// One hidden layer, `relu(W x + b)`.
    Mlp(Dense<T>),
}

impl<T: Scalar> Encoder<T> {
    /// Returns the pre-activation (for MLP encoders) and the encoded feature.
    fn encode(&self, x: &[T]) -> (Option<Vec<T>>, Vec<T>) {
        match self {
            Encoder::Identity => (None, x.to_vec()),
            Encoder::Mlp(layer) => {
                let h = layer.apply(x);
                let z = h.iter().map(|&v| v.max(T::zero())).collect();
                (Some(h), z)
            }
        }
    }
}

/// Input, feature and class dimensions of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_m1: usize,
    pub input_m2: usize,
    /// Hidden width of the modality-1 encoder; `None` selects the identity encoder.
    pub hidden_m1: Option<usize>,
    pub hidden_m2: Option<usize>,
    pub num_classes: usize,
}

impl ModelDims {
    pub fn identity(input_m1: usize, input_m2: usize, num_classes: usize) -> Self {
        Self {
            input_m1,
            input_m2,
            hidden_m1: None,
            hidden_m2: None,
            num_classes,
        }
    }

    /// Encoded feature widths `(D_m1', D_m2')`.
    pub fn feature_dims(&self) -> (usize, usize) {
        (
            self.hidden_m1.unwrap_or(self.input_m1),
            self.hidden_m2.unwrap_or(self.input_m2),
        )
    }

    pub fn fused_dim(&self, fusion: Fusion) -> usize {
        let (a, b) = self.feature_dims();
        match fusion {
            Fusion::Concat => a + b,
            Fusion::Sum => a,
        }
    }

    fn validate(&self, fusion: Fusion) -> Result<()> {
        if self.num_classes == 0 || self.input_m1 == 0 || self.input_m2 == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if self.hidden_m1 == Some(0) || self.hidden_m2 == Some(0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        let (a, b) = self.feature_dims();
        if fusion == Fusion::Sum && a != b {
            return Err(Error::config(format!(
                "sum fusion needs equal feature widths, got {a} and {b}"
            )));
        }
        Ok(())
    }
}

/// Weights of the full network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f64> {
    pub dims: ModelDims,
    pub fusion: Fusion,
    pub enc_m1: Encoder<T>,
    pub enc_m2: Encoder<T>,
    pub head_m1: Dense<T>,
    pub head_m2: Dense<T>,
    pub head_mm: Dense<T>,
}

/// Everything a forward pass produces for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult<T = f64> {
    pub z_m1: Vec<T>,
    pub z_m2: Vec<T>,
    pub z_mm: Vec<T>,
    pub f_m1: Vec<T>,
    pub f_m2: Vec<T>,
    pub f_mm: Vec<T>,
    pub p_mm: Vec<T>,
    pub pseudo_label: usize,
}

/// Seeded initialisation: weights uniform in `±1/sqrt(fan_in)`, biases zero.
pub fn init_model<T: Scalar>(dims: ModelDims, fusion: Fusion, seed: u64) -> Result<ModelParams<T>> {
    dims.validate(fusion)?;
    let mut rng = seeds::rng(seed);
    let enc = |hidden: Option<usize>, input: usize, rng: &mut seeds::Rng| match hidden {
        None => Encoder::Identity,
        Some(h) => Encoder::Mlp(Dense::init(h, input, rng)),
    };
    let enc_m1 = enc(dims.hidden_m1, dims.input_m1, &mut rng);
    let enc_m2 = enc(dims.hidden_m2, dims.input_m2, &mut rng);
    let (d1, d2) = dims.feature_dims();
    let k = dims.num_classes;
    let head_m1 = Dense::init(k, d1, &mut rng);
    let head_m2 = Dense::init(k, d2, &mut rng);
    let head_mm = Dense::init(k, dims.fused_dim(fusion), &mut rng);
    Ok(ModelParams {
        dims,
        fusion,
        enc_m1,
        enc_m2,
        head_m1,
        head_m2,
        head_mm,
    })
}

/// Softmax with the max logit subtracted first.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&f| (f - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(logits)[label]` through log-sum-exp.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&f| (f - max).exp()).sum::<T>().ln();
    lse - logits[label]
}

impl<T: Scalar> ModelParams<T> {
    pub fn num_classes(&self) -> usize {
        self.dims.num_classes
    }

    /// Zero-valued parameters with the same structure; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let zero_dense = |d: &Dense<T>| Dense::zeros(d.out_dim(), d.in_dim());
        let zero_enc = |e: &Encoder<T>| match e {
            Encoder::Identity => Encoder::Identity,
            Encoder::Mlp(d) => Encoder::Mlp(zero_dense(d)),
        };
        Self {
            dims: self.dims,
            fusion: self.fusion,
            enc_m1: zero_enc(&self.enc_m1),
            enc_m2: zero_enc(&self.enc_m2),
            head_m1: zero_dense(&self.head_m1),
            head_m2: zero_dense(&self.head_m2),
            head_mm: zero_dense(&self.head_mm),
        }
    }

    /// Checks structural invariants: layer shapes agree with `dims`, the fusion
    /// rule holds and every weight is finite.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate(self.fusion)?;
        let (d1, d2) = self.dims.feature_dims();
        let k = self.dims.num_classes;
        let check = |name: &str, d: &Dense<T>, rows: usize, cols: usize| -> Result<()> {
            if d.out_dim() != rows || d.in_dim() != cols || d.bias.len() != rows {
                return Err(Error::dim(format!(
                    "{name}: expected {rows}x{cols}, got {}x{}",
                    d.out_dim(),
                    d.in_dim()
                )));
            }
            Ok(())
        };
        for (name, enc, hidden, input) in [
            (
                "enc_m1",
                &self.enc_m1,
                self.dims.hidden_m1,
                self.dims.input_m1,
            ),
            (
                "enc_m2",
                &self.enc_m2,
                self.dims.hidden_m2,
                self.dims.input_m2,
            ),
        ] {
            match (enc, hidden) {
                (Encoder::Identity, None) => {}
                (Encoder::Mlp(d), Some(h)) => check(name, d, h, input)?,
                _ => {
                    return Err(Error::dim(format!(
                        "{name}: encoder kind disagrees with dims"
                    )))
                }
            }
        }
        check("head_m1", &self.head_m1, k, d1)?;
        check("head_m2", &self.head_m2, k, d2)?;
        check(
            "head_mm",
            &self.head_mm,
            k,
            self.dims.fused_dim(self.fusion),
        )?;
        if !self
            .tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
        {
            return Err(Error::config("non-finite model weight"));
        }
        Ok(())
    }

    /// All parameter tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(10);
        for enc in [&self.enc_m1, &self.enc_m2] {
            if let Encoder::Mlp(d) = enc {
                out.push(d.weight.as_slice());
                out.push(d.bias.as_slice());
            }
        }
        for d in [&self.head_m1, &self.head_m2, &self.head_mm] {
            out.push(d.weight.as_slice());
            out.push(d.bias.as_slice());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(10);
        for enc in [&mut self.enc_m1, &mut self.enc_m2] {
            if let Encoder::Mlp(d) = enc {
                out.push(d.weight.as_mut_slice());
                out.push(d.bias.as_mut_slice());
            }
        }
        for d in [&mut self.head_m1, &mut self.head_m2, &mut self.head_mm] {
            out.push(d.weight.as_mut_slice());
            out.push(d.bias.as_mut_slice());
        }
        out
    }

    /// `self += alpha · other` over every tensor.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy_vec(dst, alpha, src);
        }
    }

    fn check_sample(&self, sample: &MultimodalSample<T>) -> Result<()> {
        if sample.x_m1.len() != self.dims.input_m1 || sample.x_m2.len() != self.dims.input_m2 {
            return Err(Error::dim(format!(
                "sample has dims ({}, {}), model expects ({}, {})",
                sample.x_m1.len(),
                sample.x_m2.len(),
                self.dims.input_m1,
                self.dims.input_m2
            )));
        }
        Ok(())
    }

    pub fn check_dataset(&self, ds: &Dataset<T>) -> Result<()> {
        let (d1, d2) = ds.modality_dims();
        if (d1, d2) != (self.dims.input_m1, self.dims.input_m2) {
            return Err(Error::dim(format!(
                "dataset has dims ({d1}, {d2}), model expects ({}, {})",
                self.dims.input_m1, self.dims.input_m2
            )));
        }
        if ds.num_classes() != self.dims.num_classes {
            return Err(Error::dim(format!(
                "dataset has {} classes, model has {}",
                ds.num_classes(),
                self.dims.num_classes
            )));
        }
        Ok(())
    }

    /// Fused multimodal feature. A `None` modality stands for the zero vector.
    pub fn fuse(&self, z_m1: Option<&[T]>, z_m2: Option<&[T]>) -> Vec<T> {
        let (d1, d2) = self.dims.feature_dims();
        match self.fusion {
            Fusion::Concat => {
                let mut z = Vec::with_capacity(d1 + d2);
                match z_m1 {
                    Some(a) => z.extend_from_slice(a),
                    None => z.resize(d1, T::zero()),
                }
                match z_m2 {
                    Some(b) => z.extend_from_slice(b),
                    None => z.resize(d1 + d2, T::zero()),
                }
                z
            }
            Fusion::Sum => {
                let mut z = vec![T::zero(); d1];
                for part in [z_m1, z_m2].into_iter().flatten() {
                    axpy_vec(&mut z, T::one(), part);
                }
                z
            }
        }
    }

    /// Multimodal logits for (possibly masked) encoded features.
    pub fn fused_logits(&self, z_m1: Option<&[T]>, z_m2: Option<&[T]>) -> Vec<T> {
        self.head_mm.apply(&self.fuse(z_m1, z_m2))
    }

    pub fn encode(&self, sample: &MultimodalSample<T>) -> (Vec<T>, Vec<T>) {
        (
            self.enc_m1.encode(&sample.x_m1).1,
            self.enc_m2.encode(&sample.x_m2).1,
        )
    }

    pub fn forward(&self, sample: &MultimodalSample<T>) -> Result<ForwardResult<T>> {
        self.check_sample(sample)?;
        Ok(self.forward_unchecked(sample))
    }

    pub(crate) fn forward_unchecked(&self, sample: &MultimodalSample<T>) -> ForwardResult<T> {
        let (z_m1, z_m2) = self.encode(sample);
        let z_mm = self.fuse(Some(&z_m1), Some(&z_m2));
        let f_m1 = self.head_m1.apply(&z_m1);
        let f_m2 = self.head_m2.apply(&z_m2);
        let f_mm = self.head_mm.apply(&z_mm);
        let p_mm = softmax(&f_mm);
        let pseudo_label = argmax(&f_mm).unwrap_or(0);
        ForwardResult {
            z_m1,
            z_m2,
            z_mm,
            f_m1,
            f_m2,
            f_mm,
            p_mm,
            pseudo_label,
        }
    }

    /// Mean of the three head cross-entropies against `label`.
    pub fn loss_final(&self, sample: &MultimodalSample<T>, label: usize) -> Result<T> {
        self.check_sample(sample)?;
        self.check_label(label)?;
        let fw = self.forward_unchecked(sample);
        Ok(head_loss(&fw, label))
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.dims.num_classes {
            return Err(Error::config(format!(
                "label {label} outside [0, {})",
                self.dims.num_classes
            )));
        }
        Ok(())
    }

    /// Accumulates `scale · ∂loss_final/∂θ` into `grad` and returns the loss.
    pub fn accumulate_gradient(
        &self,
        sample: &MultimodalSample<T>,
        label: usize,
        scale: T,
        grad: &mut Self,
    ) -> Result<T> {
        self.check_sample(sample)?;
        self.check_label(label)?;
        Ok(self.backprop(sample, label, scale, grad))
    }

    fn backprop(&self, sample: &MultimodalSample<T>, label: usize, scale: T, grad: &mut Self) -> T {
        let (h1, z1) = self.enc_m1.encode(&sample.x_m1);
        let (h2, z2) = self.enc_m2.encode(&sample.x_m2);
        let zmm = self.fuse(Some(&z1), Some(&z2));
        let f1 = self.head_m1.apply(&z1);
        let f2 = self.head_m2.apply(&z2);
        let fmm = self.head_mm.apply(&zmm);
        let loss =
            (cross_entropy(&f1, label) + cross_entropy(&f2, label) + cross_entropy(&fmm, label))
                / T::of(3.0);

        // dL/df = (softmax(f) - e_y) / 3 for each head
        let third = T::one() / T::of(3.0);
        let delta = |f: &[T]| {
            let mut d = softmax(f);
            d[label] -= T::one();
            d.iter_mut().for_each(|v| *v *= third);
            d
        };
        let (d1, d2, dmm) = (delta(&f1), delta(&f2), delta(&fmm));

        grad.head_m1.weight.add_outer(scale, &d1, &z1);
        axpy_vec(&mut grad.head_m1.bias, scale, &d1);
        grad.head_m2.weight.add_outer(scale, &d2, &z2);
        axpy_vec(&mut grad.head_m2.bias, scale, &d2);
        grad.head_mm.weight.add_outer(scale, &dmm, &zmm);
        axpy_vec(&mut grad.head_mm.bias, scale, &dmm);

        let any_mlp =
            matches!(self.enc_m1, Encoder::Mlp(_)) || matches!(self.enc_m2, Encoder::Mlp(_));
        if !any_mlp {
            return loss;
        }
        let dzmm = self.head_mm.weight.tr_mul_vec(&dmm);
        let mut dz1 = self.head_m1.weight.tr_mul_vec(&d1);
        let mut dz2 = self.head_m2.weight.tr_mul_vec(&d2);
        match self.fusion {
            Fusion::Concat => {
                let n1 = z1.len();
                axpy_vec(&mut dz1, T::one(), &dzmm[..n1]);
                axpy_vec(&mut dz2, T::one(), &dzmm[n1..]);
            }
            Fusion::Sum => {
                axpy_vec(&mut dz1, T::one(), &dzmm);
                axpy_vec(&mut dz2, T::one(), &dzmm);
            }
        }
        for (enc, genc, pre, dz, x) in [
            (&self.enc_m1, &mut grad.enc_m1, h1, dz1, &sample.x_m1),
            (&self.enc_m2, &mut grad.enc_m2, h2, dz2, &sample.x_m2),
        ] {
            if let (Encoder::Mlp(_), Encoder::Mlp(g), Some(h)) = (enc, genc, pre) {
                let dh: Vec<T> = dz
                    .iter()
                    .zip(&h)
                    .map(|(&d, &hv)| if hv > T::zero() { d } else { T::zero() })
                    .collect();
                g.weight.add_outer(scale, &dh, x);
                axpy_vec(&mut g.bias, scale, &dh);
            }
        }
        loss
    }
}

fn head_loss<T: Scalar>(fw: &ForwardResult<T>, label: usize) -> T {
    (cross_entropy(&fw.f_m1, label)
        + cross_entropy(&fw.f_m2, label)
        + cross_entropy(&fw.f_mm, label))
        / T::of(3.0)
}

/// Minibatch SGD settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate < 0.0
            || !self.learning_rate.is_finite()
        {
            return Err(Error::config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Trained parameters plus the mean training loss of every epoch.
#[derive(Debug, Clone)]
pub struct Trained<T = f64> {
    pub params: ModelParams<T>,
    pub epoch_losses: Vec<T>,
}

/// Minibatch SGD on the averaged three-head cross-entropy.
///
/// Samples are reshuffled every epoch from a stream seeded by `cfg.seed`;
/// gradients are summed in batch order, so results are bit-reproducible.
pub fn train<T: Scalar>(
    model: &ModelParams<T>,
    dataset: &Dataset<T>,
    labeled: &[usize],
    cfg: &TrainConfig,
) -> Result<Trained<T>> {
    cfg.validate()?;
    model.check_dataset(dataset)?;
    if labeled.is_empty() {
        return Err(Error::Empty("labeled set"));
    }
    let mut in_train = vec![false; dataset.len()];
    for &i in dataset.train_indices() {
        in_train[i] = true;
    }
    if let Some(&bad) = labeled
        .iter()
        .find(|&&i| i >= dataset.len() || !in_train[i])
    {
        return Err(Error::config(format!(
            "labeled index {bad} is not in the train split"
        )));
    }

    let mut params = model.clone();
    let mut grad = params.zeros_like();
    let mut order = labeled.to_vec();
    let mut rng = seeds::rng(cfg.seed);
    let lr = T::of(cfg.learning_rate);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = T::zero();
        for batch in order.chunks(cfg.batch_size) {
            for t in grad.tensors_mut() {
                t.fill(T::zero());
            }
            let scale = T::one() / T::of_usize(batch.len());
            for &i in batch {
                let s = dataset.sample(i);
                total += params.backprop(s, s.label, scale, &mut grad);
            }
            params.axpy(-lr, &grad);
        }
        epoch_losses.push(total / T::of_usize(order.len()));
    }
    Ok(Trained {
        params,
        epoch_losses,
    })
}

/// Top-1 accuracy of the three heads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub mm: f64,
    pub m1: f64,
    pub m2: f64,
}

pub fn evaluate<T: Scalar>(
    model: &ModelParams<T>,
    dataset: &Dataset<T>,
    indices: &[usize],
) -> Result<Accuracy> {
    if indices.is_empty() {
        return Err(Error::Empty("evaluation indices"));
    }
    model.check_dataset(dataset)?;
    let mut hits = [0usize; 3];
    for &i in indices {
        let s = dataset.sample(i);
        let fw = model.forward_unchecked(s);
        for (h, f) in hits.iter_mut().zip([&fw.f_mm, &fw.f_m1, &fw.f_m2]) {
            if argmax(f) == Some(s.label) {
                *h += 1;
            }
        }
    }
    let n = indices.len() as f64;
    Ok(Accuracy {
        mm: hits[0] as f64 / n,
        m1: hits[1] as f64 / n,
        m2: hits[2] as f64 / n,
    })
}

const CHECKPOINT_MAGIC: &str = "mmal-checkpoint 1";

fn tensor_names(model: &ModelParams<impl Scalar>) -> Vec<(String, usize, usize)> {
    let mut names = Vec::new();
    for (name, enc) in [("enc_m1", &model.enc_m1), ("enc_m2", &model.enc_m2)] {
        if let Encoder::Mlp(d) = enc {
            names.push((format!("{name}.weight"), d.out_dim(), d.in_dim()));
            names.push((format!("{name}.bias"), 1, d.out_dim()));
        }
    }
    for (name, d) in [
        ("head_m1", &model.head_m1),
        ("head_m2", &model.head_m2),
        ("head_mm", &model.head_mm),
    ] {
        names.push((format!("{name}.weight"), d.out_dim(), d.in_dim()));
        names.push((format!("{name}.bias"), 1, d.out_dim()));
    }
    names
}

fn hidden_token(h: Option<usize>) -> String {
    h.map_or_else(|| "identity".to_string(), |v| v.to_string())
}

/// Text checkpoint.
///
/// ```text
/// mmal-checkpoint 1
/// fusion concat
/// classes 4
/// inputs 16 16
/// hidden identity 8
/// tensor head_m1.weight 4 16
/// <one line per row, space-separated>
/// ```
///
/// Tensors appear in [`ModelParams::tensors`] order; biases are stored as 1×n.
/// Values are written in shortest round-trip form, so loading is bit-exact.
pub fn checkpoint_to_string<T: Scalar>(model: &ModelParams<T>) -> String {
    let d = &model.dims;
    let mut out = String::new();
    writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
    writeln!(out, "fusion {}", model.fusion.name()).unwrap();
    writeln!(out, "classes {}", d.num_classes).unwrap();
    writeln!(out, "inputs {} {}", d.input_m1, d.input_m2).unwrap();
    writeln!(
        out,
        "hidden {} {}",
        hidden_token(d.hidden_m1),
        hidden_token(d.hidden_m2)
    )
    .unwrap();
    for ((name, rows, cols), data) in tensor_names(model).into_iter().zip(model.tensors()) {
        writeln!(out, "tensor {name} {rows} {cols}").unwrap();
        for r in 0..rows {
            let line: Vec<String> = data[r * cols..(r + 1) * cols]
                .iter()
                .map(T::to_string)
                .collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
    }
    out
}

struct LineReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineReader<'a> {
    fn bad(line: usize, msg: &str) -> Error {
        Error::config(format!("checkpoint line {line}: {msg}"))
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| Error::config(format!("checkpoint truncated before {what}")))
    }

    /// Reads a `key value...` line.
    fn field(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, line) = self.next(key)?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(Self::bad(n, &format!("expected `{key}`")));
        }
        Ok((n, parts.collect()))
    }
}

fn parse_usize(n: usize, s: Option<&&str>) -> Result<usize> {
    s.and_then(|v| v.parse().ok())
        .ok_or_else(|| LineReader::bad(n, "expected an integer"))
}

fn parse_hidden(n: usize, s: Option<&&str>) -> Result<Option<usize>> {
    match s {
        Some(&"identity") => Ok(None),
        _ => parse_usize(n, s).map(Some),
    }
}

pub fn checkpoint_from_str<T: Scalar>(text: &str) -> Result<ModelParams<T>> {
    let mut rd = LineReader {
        lines: text.lines().enumerate(),
    };
    let (n, magic) = rd.next("magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(LineReader::bad(n, "not a checkpoint"));
    }
    let (n, fusion) = rd.field("fusion")?;
    let fusion: Fusion = fusion
        .first()
        .ok_or_else(|| LineReader::bad(n, "missing fusion"))?
        .parse()?;
    let (n, classes) = rd.field("classes")?;
    let num_classes = parse_usize(n, classes.first())?;
    let (n, inputs) = rd.field("inputs")?;
    let input_m1 = parse_usize(n, inputs.first())?;
    let input_m2 = parse_usize(n, inputs.get(1))?;
    let (n, hidden) = rd.field("hidden")?;
    let dims = ModelDims {
        input_m1,
        input_m2,
        hidden_m1: parse_hidden(n, hidden.first())?,
        hidden_m2: parse_hidden(n, hidden.get(1))?,
        num_classes,
    };
    let mut model: ModelParams<T> = init_model(dims, fusion, 0)?.zeros_like();
    let names = tensor_names(&model);
    for ((name, rows, cols), dst) in names.into_iter().zip(model.tensors_mut()) {
        let (n, head) = rd.field("tensor")?;
        if head.first() != Some(&name.as_str())
            || head.get(1).and_then(|v| v.parse().ok()) != Some(rows)
            || head.get(2).and_then(|v| v.parse().ok()) != Some(cols)
        {
            return Err(LineReader::bad(
                n,
                &format!("expected tensor {name} {rows} {cols}"),
            ));
        }
        for r in 0..rows {
            let (n, line) = rd.next("tensor row")?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != cols {
                return Err(LineReader::bad(n, &format!("expected {cols} values")));
            }
            for (c, v) in vals.into_iter().enumerate() {
                dst[r * cols + c] = v
                    .parse()
                    .map_err(|_| LineReader::bad(n, "invalid number"))?;
            }
        }
    }
    model.validate()?;
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(model: &ModelParams<T>, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_string(model))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    checkpoint_from_str(&text)
}
