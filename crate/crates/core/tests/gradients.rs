mod common;

use common::{random_dims, random_model, random_sample, rel_err};
use mmal::embedding::gradient_embedding;
use mmal::model::{cross_entropy, Fusion, ModelParams};
use mmal::seeds;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn central_difference(
    model: &ModelParams,
    tensor: usize,
    entry: usize,
    loss: impl Fn(&ModelParams) -> f64,
) -> f64 {
    let mut plus = model.clone();
    plus.tensors_mut()[tensor][entry] += H;
    let mut minus = model.clone();
    minus.tensors_mut()[tensor][entry] -= H;
    (loss(&plus) - loss(&minus)) / (2.0 * H)
}

fn check_all_parameters(fusion: Fusion, hidden: bool, seed: u64) {
    let mut rng = seeds::rng(seed);
    let mut checked = 0;
    for _ in 0..10 {
        let dims = random_dims(&mut rng, fusion, hidden);
        let model = random_model(&mut rng, dims, fusion, 0.8);
        let s = random_sample(&mut rng, dims.input_m1, dims.input_m2, dims.num_classes);
        let mut grad = model.zeros_like();
        model
            .accumulate_gradient(&s, s.label, 1.0, &mut grad)
            .unwrap();
        let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.to_vec()).collect();
        for (t, values) in analytic.iter().enumerate() {
            for (e, &a) in values.iter().enumerate() {
                let n = central_difference(&model, t, e, |m| m.loss_final(&s, s.label).unwrap());
                assert!(
                    rel_err(a, n) <= TOL,
                    "tensor {t} entry {e}: analytic {a} numeric {n}"
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn concat_identity_gradients_match_finite_differences() {
    check_all_parameters(Fusion::Concat, false, 1);
}

#[test]
fn concat_mlp_gradients_match_finite_differences() {
    check_all_parameters(Fusion::Concat, true, 2);
}

#[test]
fn sum_identity_gradients_match_finite_differences() {
    check_all_parameters(Fusion::Sum, false, 3);
}

#[test]
fn sum_mlp_gradients_match_finite_differences() {
    check_all_parameters(Fusion::Sum, true, 4);
}

#[test]
fn embedding_is_the_pseudo_label_gradient_of_the_fused_head() {
    let mut rng = seeds::rng(5);
    for fusion in [Fusion::Concat, Fusion::Sum] {
        for _ in 0..10 {
            let dims = random_dims(&mut rng, fusion, true);
            let model = random_model(&mut rng, dims, fusion, 0.8);
            let s = random_sample(&mut rng, dims.input_m1, dims.input_m2, dims.num_classes);
            let emb = gradient_embedding(&model, &s, 0).unwrap();
            let y_hat = model.forward(&s).unwrap().pseudo_label;
            // head_mm.weight sits two tensors before the end (weight, bias)
            let w_index = model.tensors().len() - 2;
            for (e, &a) in emb.values.iter().enumerate() {
                let n = central_difference(&model, w_index, e, |m| {
                    cross_entropy(&m.forward(&s).unwrap().f_mm, y_hat)
                });
                assert!(rel_err(a, n) <= TOL, "{fusion:?} entry {e}: {a} vs {n}");
            }
        }
    }
}

#[test]
fn batch_gradient_is_the_scaled_sum_of_sample_gradients() {
    let mut rng = seeds::rng(6);
    let dims = random_dims(&mut rng, Fusion::Concat, true);
    let model = random_model(&mut rng, dims, Fusion::Concat, 0.5);
    let samples: Vec<_> = (0..4)
        .map(|_| random_sample(&mut rng, dims.input_m1, dims.input_m2, dims.num_classes))
        .collect();
    let mut batch = model.zeros_like();
    for s in &samples {
        model
            .accumulate_gradient(s, s.label, 0.25, &mut batch)
            .unwrap();
    }
    let mut reference = model.zeros_like();
    for s in &samples {
        let mut g = model.zeros_like();
        model.accumulate_gradient(s, s.label, 1.0, &mut g).unwrap();
        reference.axpy(0.25, &g);
    }
    for (a, b) in batch.tensors().iter().zip(reference.tensors()) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
