mod common;

use common::{enriched, small_config};
use grader_core::model::{BatchRecord, Encoder, GradingModel};
use grader_core::nn::{
    gradient_check, mse_loss, GradCheckOptions, Linear, MlpParams, NnError, Parameters, Tensor, TransformerLayerParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_vec(&[rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar objective `Σ w ⊙ layer(X)` with fixed random weights `w`.
fn layer_objective(x: &Tensor<f64>, mask: &[u8], w: &Tensor<f64>) -> impl Fn(&TransformerLayerParams<f64>) -> Result<f64, NnError> {
    let (x, mask, w) = (x.clone(), mask.to_vec(), w.clone());
    move |p| {
        let y = p.forward(&x, &mask)?;
        Ok(y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
    }
}

#[test]
fn transformer_layer_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = TransformerLayerParams::<f64>::init(&mut rng, 8, 2).unwrap();
    for mask in [vec![1u8, 1, 1, 1], vec![1, 1, 1, 0]] {
        let x = random(&mut rng, 4, 8);
        let w = random(&mut rng, 4, 8);
        let (_, trace) = p.forward_traced(&x, &mask).unwrap();
        let mut grads = p.zeros_like();
        let dx = p.backward(&trace, &w, &mut grads, true).unwrap().unwrap();
        let r = gradient_check(layer_objective(&x, &mask, &w), &p, &grads, GradCheckOptions::default()).unwrap();
        assert!(r.max_relative_error < 1e-6, "params {r:?}");

        // Input gradient, treating X as the parameter.
        let (p2, mask2, w2) = (p.clone(), mask.clone(), w.clone());
        let fx = move |xi: &Tensor<f64>| -> Result<f64, NnError> {
            let y = p2.forward(xi, &mask2)?;
            Ok(y.data().iter().zip(w2.data()).map(|(a, b)| a * b).sum())
        };
        let r = gradient_check(fx, &x, &dx, GradCheckOptions::default()).unwrap();
        assert!(r.max_relative_error < 1e-6, "input {r:?}");
    }
}

#[test]
fn mlp_head_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = MlpParams::<f64>::init(&mut rng, 8);
    let v = Tensor::vector((0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
    let trace = p.forward_traced(&v).unwrap();
    let mut grads = MlpParams::zeros(8);
    p.backward(&trace, 1.0, &mut grads).unwrap();
    let vv = v.clone();
    let r = gradient_check(move |q: &MlpParams<f64>| q.forward(&vv), &p, &grads, GradCheckOptions::default()).unwrap();
    assert!(r.max_relative_error < 1e-6, "{r:?}");
}

#[test]
fn linear_mse_gradient_has_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n, k) = (6, 3);
    let x = random(&mut rng, n, k);
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut lin = Linear::<f64>::zeros(k, 1);
    lin.weight = random(&mut rng, k, 1);

    let pred = lin.forward(&x).unwrap();
    let dy: Vec<f64> = pred.data().iter().zip(&y).map(|(p, t)| 2.0 * (p - t) / n as f64).collect();
    let mut grads = Linear::zeros(k, 1);
    lin.backward(&x, &Tensor::from_vec(&[n, 1], dy).unwrap(), &mut grads).unwrap();

    // 2 Xᵀ(Xw − y)/n written out with plain loops.
    for j in 0..k {
        let mut g = 0.0;
        for i in 0..n {
            let xw: f64 = (0..k).map(|c| x.at(i, c) * lin.weight.at(c, 0)).sum();
            g += x.at(i, j) * (xw - y[i]);
        }
        g *= 2.0 / n as f64;
        assert!((grads.weight.at(j, 0) - g).abs() < 1e-12);
    }
    let loss = |l: &Linear<f64>| mse_loss(l.forward(&x)?.data(), &y);
    assert!(loss(&lin).unwrap() > 0.0);
}

#[test]
fn full_model_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = small_config();
    let model = GradingModel::<f64>::init(cfg.clone()).unwrap();
    let encoder = Encoder::from_config(&cfg).unwrap();
    let item = enriched(0, &mut rng);
    let features = encoder.features(&item, &cfg).unwrap();
    let label = item.item.score().unwrap();

    let record = model.record(&[(&features, label)]).unwrap();
    let (_, grads) = model.backward_batch(&record).unwrap();
    let f = |p: &grader_core::model::ModelParams<f64>| {
        let m = GradingModel { config: cfg.clone(), params: p.clone() };
        let y = m.forward(&features).map_err(|e| NnError::Numeric(e.to_string()))?;
        Ok((y - label) * (y - label))
    };
    let opts = GradCheckOptions { samples_per_tensor: 40, ..Default::default() };
    let r = gradient_check(f, &model.params, &grads, opts).unwrap();
    assert!(r.max_relative_error <= 1e-4, "{r:?}");
}

#[test]
fn backward_requires_a_forward_pass() {
    let model = GradingModel::<f64>::init(small_config()).unwrap();
    let empty = BatchRecord::new();
    assert!(matches!(model.backward_batch(&empty), Err(grader_core::model::ModelError::Nn(NnError::State(_)))));
}

#[test]
fn constant_loss_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = small_config();
    let model = GradingModel::<f64>::init(cfg.clone()).unwrap();
    let encoder = Encoder::from_config(&cfg).unwrap();
    let features = encoder.features(&enriched(1, &mut rng), &cfg).unwrap();
    let trace = model.forward_traced(&features).unwrap();
    let mut grads = model.params.zeros_like();
    model.backward(&trace, 0.0, &mut grads).unwrap();
    assert!(grads.tensors().iter().all(|t| t.max_abs() == 0.0));
}

#[test]
fn fused_length_tracks_active_branches() {
    use grader_core::data::Branch;
    use grader_core::model::{ablate, Component};
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let item = enriched(2, &mut rng);
    let base = small_config();
    for (disabled, k) in [
        (vec![], 4),
        (vec![Component::Branch(Branch::PseudoQuestion), Component::Branch(Branch::GeneralEvaluation)], 2),
        (vec![Component::Cross], 4),
    ] {
        let cfg = ablate(&base, &disabled).unwrap();
        let model = GradingModel::<f64>::init(cfg.clone()).unwrap();
        let enc = Encoder::from_config(&cfg).unwrap();
        let trace = model.forward_traced(&enc.features(&item, &cfg).unwrap()).unwrap();
        assert_eq!(trace.fused().rows(), k * 16);
        assert_eq!(trace.fused_mask().len(), k * 16);
        let y = trace.score();
        assert!(y > 0.0 && y < 1.0);
    }
}
