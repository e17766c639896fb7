//! Per-sample modality attribution with Shapley values.
//!
//! The game's players are the encoded modality features; a coalition keeps its
//! members' features and replaces the others with the zero vector. The payout
//! is the multimodal softmax probability of the pseudo label, where the pseudo
//! label is fixed from the unmasked forward pass.

use num_traits::{FromPrimitive, Num};
use serde::Serialize;

use crate::datagen::MultimodalSample;
use crate::error::{Error, Result};
use crate::model::{softmax, ForwardResult, ModelParams};
use crate::scalar::{argmax, Scalar};

/// Bitmask of present players; bit `i` set means modality `i` keeps its features.
pub type Coalition = u32;

pub const NONE: Coalition = 0b00;
pub const ONLY_M1: Coalition = 0b01;
pub const ONLY_M2: Coalition = 0b10;
pub const BOTH: Coalition = 0b11;

/// Exact enumeration is refused above this many players.
pub const MAX_EXACT_PLAYERS: usize = 20;

/// Attribution of one two-modality sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttributionResult<T = f64> {
    /// Shapley values; may be negative.
    pub phi: [T; 2],
    /// Normalised absolute Shapley values, summing to one.
    pub contribution: [T; 2],
    /// Dominance degree, `|Φ_m1 - Φ_m2|`.
    pub rho: T,
    /// Embedding-block scalers: 1 for the dominant modality, `1 - rho` for the other.
    pub weights: [T; 2],
    /// Both Shapley values were exactly zero and `contribution` fell back to uniform.
    pub degenerate: bool,
    pub pseudo_label: usize,
}

impl<T: Scalar> AttributionResult<T> {
    /// Index of the dominant modality (0 or 1); modality 1 wins ties.
    pub fn dominant(&self) -> usize {
        argmax(&self.contribution).unwrap_or(0)
    }
}

/// Payout of `coalition` given already-encoded features.
pub fn outcome_from_features<T: Scalar>(
    model: &ModelParams<T>,
    z_m1: &[T],
    z_m2: &[T],
    coalition: Coalition,
    pseudo_label: usize,
) -> T {
    let keep1 = (coalition & ONLY_M1 != 0).then_some(z_m1);
    let keep2 = (coalition & ONLY_M2 != 0).then_some(z_m2);
    softmax(&model.fused_logits(keep1, keep2))[pseudo_label]
}

/// Softmax probability of class `pseudo_label` when the modalities outside
/// `coalition` are replaced by zero features.
pub fn model_outcome<T: Scalar>(
    model: &ModelParams<T>,
    coalition: Coalition,
    sample: &MultimodalSample<T>,
    pseudo_label: usize,
) -> Result<T> {
    if pseudo_label >= model.num_classes() {
        return Err(Error::config(format!(
            "pseudo label {pseudo_label} outside [0, {})",
            model.num_classes()
        )));
    }
    let fw = model.forward(sample)?;
    Ok(outcome_from_features(
        model,
        &fw.z_m1,
        &fw.z_m2,
        coalition,
        pseudo_label,
    ))
}

fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

/// Shapley values by enumerating every coalition.
///
/// `outcome` is queried exactly once per coalition (`2^players` calls). Works for
/// any numeric type with exact small-integer conversion, including rationals.
pub fn shapley_exact<T, F>(mut outcome: F, players: usize) -> Result<Vec<T>>
where
    T: Clone + Num + FromPrimitive,
    F: FnMut(Coalition) -> T,
{
    if players == 0 {
        return Err(Error::config("at least one player is required"));
    }
    if players > MAX_EXACT_PLAYERS {
        return Err(Error::TooManyModalities(players));
    }
    let values: Vec<T> = (0..1u32 << players).map(&mut outcome).collect();
    let total = T::from_u64(factorial(players)).expect("factorial representable");
    let weights: Vec<T> = (0..players)
        .map(|s| {
            let num =
                T::from_u64(factorial(s) * factorial(players - s - 1)).expect("representable");
            num / total.clone()
        })
        .collect();
    let phi = (0..players)
        .map(|i| {
            let bit = 1u32 << i;
            (0..1u32 << players)
                .filter(|s| s & bit == 0)
                .fold(T::zero(), |acc, s| {
                    let w = weights[s.count_ones() as usize].clone();
                    let marginal = values[(s | bit) as usize].clone() - values[s as usize].clone();
                    acc + w * marginal
                })
        })
        .collect();
    Ok(phi)
}

/// Closed-form two-player Shapley values from the four coalition payouts.
pub fn shapley_two_from_outcomes<T: Scalar>(v_none: T, v_m1: T, v_m2: T, v_both: T) -> [T; 2] {
    let half = T::of(0.5);
    [
        half * ((v_both - v_m2) + (v_m1 - v_none)),
        half * ((v_both - v_m1) + (v_m2 - v_none)),
    ]
}

/// Shapley values of the two modality features for one sample.
pub fn shapley_two<T: Scalar>(
    model: &ModelParams<T>,
    sample: &MultimodalSample<T>,
) -> Result<[T; 2]> {
    let fw = model.forward(sample)?;
    Ok(shapley_two_forward(model, &fw))
}

pub(crate) fn shapley_two_forward<T: Scalar>(
    model: &ModelParams<T>,
    fw: &ForwardResult<T>,
) -> [T; 2] {
    let v = |c| outcome_from_features(model, &fw.z_m1, &fw.z_m2, c, fw.pseudo_label);
    shapley_two_from_outcomes(v(NONE), v(ONLY_M1), v(ONLY_M2), v(BOTH))
}

/// Normalised contributions `Φ_i = |φ_i| / Σ|φ_j|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution<T> {
    pub values: Vec<T>,
    /// All φ were zero; `values` is uniform.
    pub degenerate: bool,
}

pub fn contribution<T: Scalar>(phi: &[T]) -> Contribution<T> {
    let total: T = phi.iter().map(|v| v.abs()).sum();
    if total == T::zero() || !total.is_finite() {
        let u = T::one() / T::of_usize(phi.len().max(1));
        return Contribution {
            values: vec![u; phi.len()],
            degenerate: true,
        };
    }
    Contribution {
        values: phi.iter().map(|v| v.abs() / total).collect(),
        degenerate: false,
    }
}

/// Dominance degree `Σ_i (max Φ - Φ_i)`.
pub fn dominance<T: Scalar>(contribution: &[T]) -> T {
    let max = contribution.iter().copied().fold(T::neg_infinity(), T::max);
    contribution.iter().map(|&c| max - c).sum()
}

/// `(1, 1 - rho)` when modality 1 contributes at least as much, else `(1 - rho, 1)`.
pub fn modulation_weights<T: Scalar>(contribution: [T; 2]) -> [T; 2] {
    let rho = (contribution[0] - contribution[1]).abs();
    if contribution[0] >= contribution[1] {
        [T::one(), T::one() - rho]
    } else {
        [T::one() - rho, T::one()]
    }
}

/// Full attribution pipeline for one sample.
pub fn attribute<T: Scalar>(
    model: &ModelParams<T>,
    sample: &MultimodalSample<T>,
) -> Result<AttributionResult<T>> {
    let fw = model.forward(sample)?;
    Ok(attribute_forward(model, &fw))
}

/// Attribution reusing an existing forward pass.
pub fn attribute_forward<T: Scalar>(
    model: &ModelParams<T>,
    fw: &ForwardResult<T>,
) -> AttributionResult<T> {
    let phi = shapley_two_forward(model, fw);
    attribution_from_phi(phi, fw.pseudo_label)
}

pub fn attribution_from_phi<T: Scalar>(phi: [T; 2], pseudo_label: usize) -> AttributionResult<T> {
    let c = contribution(&phi);
    let contribution = [c.values[0], c.values[1]];
    AttributionResult {
        phi,
        contribution,
        rho: dominance(&contribution),
        weights: modulation_weights(contribution),
        degenerate: c.degenerate,
        pseudo_label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::{init_model, Fusion, ModelDims};

    fn table(v: [f64; 4]) -> impl Fn(Coalition) -> f64 {
        move |c| v[c as usize]
    }

    #[test]
    fn closed_form_hand_values() {
        let phi = shapley_two_from_outcomes(0.25f64, 0.7, 0.5, 0.9);
        assert!((phi[0] - 0.425).abs() < 1e-15);
        assert!((phi[1] - 0.225).abs() < 1e-15);
        let exact = shapley_exact(table([0.25, 0.7, 0.5, 0.9]), 2).unwrap();
        assert!((exact[0] - 0.425).abs() < 1e-15 && (exact[1] - 0.225).abs() < 1e-15);
    }

    #[test]
    fn symmetric_players_split_evenly() {
        let phi = shapley_exact(table([0.0, 0.5, 0.5, 1.0]), 2).unwrap();
        assert_eq!(phi, vec![0.5, 0.5]);
    }

    #[test]
    fn exact_rejects_bad_player_counts() {
        assert!(matches!(
            shapley_exact(|_| 0.0f64, 21),
            Err(Error::TooManyModalities(21))
        ));
        assert!(shapley_exact(|_| 0.0f64, 0).is_err());
    }

    #[test]
    fn contribution_cases() {
        let c = contribution(&[0.425f64, 0.225]);
        assert!((c.values[0] - 0.653_846_153_846).abs() < 1e-9);
        assert!((c.values[1] - 0.346_153_846_154).abs() < 1e-9);
        assert!(!c.degenerate);
        assert_eq!(contribution(&[-0.3, 0.3]).values, vec![0.5, 0.5]);
        let z = contribution(&[0.0, 0.0]);
        assert_eq!(z.values, vec![0.5, 0.5]);
        assert!(z.degenerate);
    }

    #[test]
    fn dominance_cases() {
        assert_eq!(dominance(&[0.5, 0.5]), 0.0);
        assert_eq!(dominance(&[1.0, 0.0, 0.0]), 2.0);
        let c = contribution(&[0.425f64, 0.225]).values;
        let rho = dominance(&c);
        assert!((rho - 0.307_692_307_7).abs() < 1e-9);
        assert_eq!(rho, (c[0] - c[1]).abs());
    }

    #[test]
    fn weight_cases() {
        assert_eq!(modulation_weights([0.5, 0.5]), [1.0, 1.0]);
        assert_eq!(modulation_weights([1.0, 0.0]), [1.0, 0.0]);
        assert_eq!(modulation_weights([0.25, 0.75]), [0.5, 1.0]);
        let c = contribution(&[0.425f64, 0.225]).values;
        let w = modulation_weights([c[0], c[1]]);
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 0.692_307_692_3).abs() < 1e-9);
    }

    fn toy_model() -> ModelParams {
        init_model(ModelDims::identity(3, 2, 4), Fusion::Concat, 5).unwrap()
    }

    fn toy_sample() -> MultimodalSample {
        MultimodalSample {
            x_m1: vec![0.4, -1.0, 0.3],
            x_m2: vec![1.5, 0.2],
            label: 0,
        }
    }

    #[test]
    fn outcome_masks() {
        let m = toy_model();
        let s = toy_sample();
        let fw = m.forward(&s).unwrap();
        let full = model_outcome(&m, BOTH, &s, fw.pseudo_label).unwrap();
        assert_eq!(full, fw.p_mm[fw.pseudo_label]);
        // zero biases: empty coalition yields zero logits
        let empty = model_outcome(&m, NONE, &s, fw.pseudo_label).unwrap();
        assert!((empty - 0.25).abs() < 1e-15);
        assert!(model_outcome(&m, BOTH, &s, 4).is_err());
    }

    #[test]
    fn null_block_is_a_null_player() {
        let mut m = toy_model();
        for r in 0..4 {
            for c in 3..5 {
                m.head_mm.weight.set(r, c, 0.0);
            }
        }
        let s = toy_sample();
        let fw = m.forward(&s).unwrap();
        let with = model_outcome(&m, BOTH, &s, fw.pseudo_label).unwrap();
        let without = model_outcome(&m, ONLY_M1, &s, fw.pseudo_label).unwrap();
        assert_eq!(with, without);
        let phi = shapley_two(&m, &s).unwrap();
        assert_eq!(phi[1], 0.0);
        let a = attribute(&m, &s).unwrap();
        assert_eq!(a.contribution, [1.0, 0.0]);
        assert_eq!(a.weights, [1.0, 0.0]);
    }

    #[test]
    fn fully_zero_head_is_degenerate() {
        let mut m = toy_model();
        m.head_mm.weight = Matrix::zeros(4, 5);
        let a = attribute(&m, &toy_sample()).unwrap();
        assert!(a.degenerate);
        assert_eq!(a.contribution, [0.5, 0.5]);
        assert_eq!(a.rho, 0.0);
        assert_eq!(a.weights, [1.0, 1.0]);
    }
}
