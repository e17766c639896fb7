//! Gradient embeddings of the multimodal classifier weights.
//!
//! For the pseudo label `ŷ` and softmax output `p`, row `i` of the gradient of
//! the multimodal cross-entropy with respect to `head_mm.weight` is
//! `(p_i - 1{ŷ = i}) · z_mm`. With concatenation this splits into one block per
//! modality, which the modulated variant rescales by the attribution weights.

use std::fs;
use std::io::{self, Read as _, Write as _};
use std::path::Path;

use rayon::prelude::*;

use crate::attribution::{attribute_forward, AttributionResult};
use crate::datagen::{Dataset, MultimodalSample};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ForwardResult, Fusion, ModelParams};
use crate::scalar::{squared_norm, Scalar};

/// Flattened `K × D_mm` gradient embedding of one sample (row-major over
/// class, then feature).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEmbedding<T = f64> {
    pub sample_index: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub values: Vec<T>,
    pub modulated: bool,
    pub norm: T,
}

impl<T: Scalar> GradientEmbedding<T> {
    pub fn row(&self, class: usize) -> &[T] {
        &self.values[class * self.dim..(class + 1) * self.dim]
    }

    /// Norms of the modality-1 and modality-2 blocks (concatenation only);
    /// `split` is the modality-1 feature width.
    pub fn block_norms(&self, split: usize) -> (T, T) {
        let mut a = T::zero();
        let mut b = T::zero();
        for k in 0..self.num_classes {
            let row = self.row(k);
            a += squared_norm(&row[..split]);
            b += squared_norm(&row[split..]);
        }
        (a.sqrt(), b.sqrt())
    }
}

/// Embedding values for a forward pass, optionally scaled per modality.
pub fn embedding_values<T: Scalar>(
    fusion: Fusion,
    fw: &ForwardResult<T>,
    weights: [T; 2],
) -> Vec<T> {
    let k = fw.p_mm.len();
    let dim = fw.z_mm.len();
    let mut out = Vec::with_capacity(k * dim);
    let modulated_sum: Vec<T>;
    let (a, b) = (fw.z_m1.as_slice(), fw.z_m2.as_slice());
    let shared = match fusion {
        Fusion::Concat => None,
        Fusion::Sum => {
            modulated_sum = a
                .iter()
                .zip(b)
                .map(|(&x, &y)| weights[0] * x + weights[1] * y)
                .collect();
            Some(modulated_sum.as_slice())
        }
    };
    for (i, &p) in fw.p_mm.iter().enumerate() {
        let coef = if i == fw.pseudo_label {
            p - T::one()
        } else {
            p
        };
        match shared {
            None => {
                let (c1, c2) = (coef * weights[0], coef * weights[1]);
                out.extend(a.iter().map(|&z| c1 * z));
                out.extend(b.iter().map(|&z| c2 * z));
            }
            Some(z) => out.extend(z.iter().map(|&v| coef * v)),
        }
    }
    out
}

fn finish<T: Scalar>(
    sample_index: usize,
    fw: &ForwardResult<T>,
    values: Vec<T>,
    modulated: bool,
) -> GradientEmbedding<T> {
    let norm = squared_norm(&values).sqrt();
    GradientEmbedding {
        sample_index,
        num_classes: fw.p_mm.len(),
        dim: fw.z_mm.len(),
        values,
        modulated,
        norm,
    }
}

/// Closed-form gradient of the pseudo-labelled multimodal cross-entropy with
/// respect to the multimodal classifier weights (biases excluded).
pub fn gradient_embedding<T: Scalar>(
    model: &ModelParams<T>,
    sample: &MultimodalSample<T>,
    sample_index: usize,
) -> Result<GradientEmbedding<T>> {
    let fw = model.forward(sample)?;
    let values = embedding_values(model.fusion, &fw, [T::one(), T::one()]);
    Ok(finish(sample_index, &fw, values, false))
}

/// Gradient embedding with each modality block scaled by its modulation weight.
pub fn modulated_embedding<T: Scalar>(
    model: &ModelParams<T>,
    sample: &MultimodalSample<T>,
    sample_index: usize,
) -> Result<(GradientEmbedding<T>, AttributionResult<T>)> {
    let fw = model.forward(sample)?;
    let attr = attribute_forward(model, &fw);
    let values = embedding_values(model.fusion, &fw, attr.weights);
    Ok((finish(sample_index, &fw, values, true), attr))
}

/// Embeddings of a whole pool, one row per entry of `indices`.
#[derive(Debug, Clone)]
pub struct PoolEmbeddings<T = f64> {
    pub indices: Vec<usize>,
    pub matrix: Matrix<T>,
    /// Present when the embeddings are modulated.
    pub attributions: Option<Vec<AttributionResult<T>>>,
}

/// Computes pool embeddings in parallel; row order follows `indices`.
pub fn embed_pool<T: Scalar>(
    model: &ModelParams<T>,
    dataset: &Dataset<T>,
    indices: &[usize],
    modulate: bool,
) -> Result<PoolEmbeddings<T>> {
    model.check_dataset(dataset)?;
    let k = model.num_classes();
    let cols = k * model.dims.fused_dim(model.fusion);
    let rows: Vec<(Vec<T>, Option<AttributionResult<T>>)> = indices
        .par_iter()
        .map(|&i| {
            let fw = model.forward_unchecked(dataset.sample(i));
            if modulate {
                let attr = attribute_forward(model, &fw);
                (
                    embedding_values(model.fusion, &fw, attr.weights),
                    Some(attr),
                )
            } else {
                (
                    embedding_values(model.fusion, &fw, [T::one(), T::one()]),
                    None,
                )
            }
        })
        .collect();
    let mut data = Vec::with_capacity(indices.len() * cols);
    let mut attrs = Vec::with_capacity(if modulate { indices.len() } else { 0 });
    for (values, attr) in rows {
        data.extend_from_slice(&values);
        attrs.extend(attr);
    }
    Ok(PoolEmbeddings {
        indices: indices.to_vec(),
        matrix: Matrix::from_vec(indices.len(), cols, data),
        attributions: modulate.then_some(attrs),
    })
}

const DUMP_MAGIC: &[u8; 8] = b"MMALEMB1";

/// Binary dump: 8-byte magic `MMALEMB1`, row count and column count as
/// little-endian u64, then the row-major values as little-endian f64.
pub fn write_embedding_dump<T: Scalar>(path: &Path, matrix: &Matrix<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + matrix.as_slice().len() * 8);
    buf.write_all(DUMP_MAGIC)?;
    buf.write_all(&(matrix.rows() as u64).to_le_bytes())?;
    buf.write_all(&(matrix.cols() as u64).to_le_bytes())?;
    for v in matrix.as_slice() {
        buf.write_all(&v.as_f64().to_le_bytes())?;
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_embedding_dump(path: &Path) -> Result<Matrix<f64>> {
    let mut f = fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Load {
            path: path.to_path_buf(),
            message: "not an embedding dump".into(),
        });
    }
    let mut word = [0u8; 8];
    f.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    f.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        f.read_exact(&mut word).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::Load {
                path: path.to_path_buf(),
                message: "truncated embedding dump".into(),
            },
            _ => e.into(),
        })?;
        data.push(f64::from_le_bytes(word));
    }
    Ok(Matrix::from_vec(rows, cols, data))
}
