use super::*;
use crate::model::predict;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;

/// Loss recomputed through the non-tape inference path.
fn reference_loss(raw: &RawParams, batch: &MiniBatch, config: &ModelConfig) -> f64 {
    let pred = predict(config, raw, batch.x.view()).unwrap();
    let n = pred.len() as f64;
    pred.iter()
        .zip(batch.y.iter())
        .fold(0.0, |acc, (p, y)| acc + (p - y) * (p - y))
        / n
}

fn random_case(seed: u64, config: &ModelConfig, b: usize) -> (RawParams, MiniBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, m, d) = (config.rules, config.inputs, config.outputs);
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    let mut raw = RawParams::zeros(p, m, d);
    raw.c = Array2::from_shape_fn((p, m), |_| u(-1.0, 1.0));
    raw.sigma_raw = Array2::from_shape_fn((p, m), |_| u(0.6, 1.5));
    raw.delta = Array2::from_shape_fn((p, m), |_| {
        let mag = u(0.05, 0.3);
        if u(0.0, 1.0) < 0.5 {
            -mag
        } else {
            mag
        }
    });
    raw.h_raw = Array2::from_shape_fn((p, m), |_| u(-1.0, 2.5));
    raw.a = Array3::from_shape_fn((d, p, m), |_| u(-1.0, 1.0));
    raw.a0 = Array2::from_shape_fn((d, p), |_| u(-1.0, 1.0));
    let x = Array2::from_shape_fn((b, m), |_| u(-1.2, 1.2));
    let y = Array2::from_shape_fn((b, d), |_| u(-1.0, 1.0));
    (raw, MiniBatch::new(x, y).unwrap())
}

/// Largest `|ad - fd| / max(|ad|, |fd|, floor)` over every parameter.
fn gradient_check(raw: &RawParams, batch: &MiniBatch, config: &ModelConfig, floor: f64) -> f64 {
    let (_, pass) = forward(raw, batch, config).unwrap();
    let analytic = backward(&pass);
    let mut worst: f64 = 0.0;
    for (t, grad) in analytic.tensors().iter().enumerate() {
        for i in 0..grad.len() {
            let mut plus = raw.clone();
            plus.tensors_mut()[t][i] += FD_STEP;
            let mut minus = raw.clone();
            minus.tensors_mut()[t][i] -= FD_STEP;
            let fd = (reference_loss(&plus, batch, config) - reference_loss(&minus, batch, config))
                / (2.0 * FD_STEP);
            worst = worst.max((grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(floor));
        }
    }
    worst
}

#[test]
fn it2_enum_gradients_match_finite_differences() {
    let config = ModelConfig::new(ModelKind::IT2, 3, 2, 1, Reducer::Enumeration).unwrap();
    for seed in 0..20 {
        let (raw, batch) = random_case(seed, &config, 4);
        let err = gradient_check(&raw, &batch, &config, 1e-7);
        assert!(err <= 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn it2_km_gradients_match_finite_differences() {
    let config = ModelConfig::new(ModelKind::IT2, 3, 2, 2, Reducer::KarnikMendel).unwrap();
    for seed in 100..110 {
        let (raw, batch) = random_case(seed, &config, 4);
        let err = gradient_check(&raw, &batch, &config, 1e-7);
        assert!(err <= 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn t1_gradients_match_finite_differences() {
    let config = ModelConfig::new(ModelKind::T1, 3, 2, 2, Reducer::Enumeration).unwrap();
    for seed in 200..215 {
        let (raw, batch) = random_case(seed, &config, 4);
        let err = gradient_check(&raw, &batch, &config, 1e-9);
        assert!(err <= 1e-6, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn reducers_give_the_same_gradient() {
    for seed in 300..310 {
        let enum_cfg = ModelConfig::new(ModelKind::IT2, 4, 2, 2, Reducer::Enumeration).unwrap();
        let km_cfg = ModelConfig {
            reducer: Reducer::KarnikMendel,
            ..enum_cfg
        };
        let (raw, batch) = random_case(seed, &enum_cfg, 6);
        let ge = backward(&forward(&raw, &batch, &enum_cfg).unwrap().1);
        let gk = backward(&forward(&raw, &batch, &km_cfg).unwrap().1);
        for (a, b) in ge.tensors().iter().zip(gk.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "seed {seed}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn t1_ignores_height_and_delta() {
    let config = ModelConfig::new(ModelKind::T1, 3, 2, 1, Reducer::Enumeration).unwrap();
    let (raw, batch) = random_case(7, &config, 5);
    let g = backward(&forward(&raw, &batch, &config).unwrap().1);
    assert!(g.h_raw.iter().all(|&v| v == 0.0));
    assert!(g.delta.iter().all(|&v| v == 0.0));
    assert!(g.c.iter().any(|&v| v != 0.0));
}

#[test]
fn perfect_prediction_has_zero_loss_and_gradient() {
    let config = ModelConfig::new(ModelKind::IT2, 2, 1, 1, Reducer::Enumeration).unwrap();
    let (raw, batch) = random_case(8, &config, 3);
    let (_, pass) = forward(&raw, &batch, &config).unwrap();
    let exact = MiniBatch::new(batch.x.clone(), pass.predictions()).unwrap();
    let (loss, pass) = forward(&raw, &exact, &config).unwrap();
    assert_eq!(loss, 0.0);
    let g = backward(&pass);
    assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
}

#[test]
fn constant_offset_loss() {
    let config = ModelConfig::new(ModelKind::T1, 2, 1, 1, Reducer::Enumeration).unwrap();
    let mut raw = RawParams::zeros(2, 1, 1);
    raw.sigma_raw.fill(1.0);
    raw.a0.fill(2.0);
    let batch = MiniBatch::new(Array2::zeros((1, 1)), Array2::zeros((1, 1))).unwrap();
    let (loss, _) = forward(&raw, &batch, &config).unwrap();
    assert!((loss - 4.0).abs() < 1e-9, "{loss}");
}

#[test]
fn gradient_scales_with_the_loss() {
    let config = ModelConfig::new(ModelKind::IT2, 3, 2, 1, Reducer::Enumeration).unwrap();
    let (raw, batch) = random_case(9, &config, 4);
    let (_, mut pass) = forward(&raw, &batch, &config).unwrap();
    let base = pass.tape.backward(pass.loss);
    let scaled_loss = pass.tape.scale(pass.loss, 3.0);
    let scaled = pass.tape.backward(scaled_loss);
    let g0 = base.get(pass.params.c).unwrap();
    let g3 = scaled.get(pass.params.c).unwrap();
    for (a, b) in g0.iter().zip(g3) {
        assert!((3.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn backward_is_deterministic() {
    let config = ModelConfig::new(ModelKind::IT2, 4, 3, 2, Reducer::Enumeration).unwrap();
    let (raw, batch) = random_case(10, &config, 8);
    let a = backward(&forward(&raw, &batch, &config).unwrap().1);
    let b = backward(&forward(&raw, &batch, &config).unwrap().1);
    assert_eq!(a, b);
}

#[test]
fn forward_rejects_bad_inputs() {
    let config = ModelConfig::new(ModelKind::IT2, 2, 2, 1, Reducer::Enumeration).unwrap();
    let (mut raw, batch) = random_case(11, &config, 2);
    let wrong = ModelConfig::new(ModelKind::IT2, 2, 3, 1, Reducer::Enumeration).unwrap();
    assert!(matches!(forward(&raw, &batch, &wrong), Err(FlsError::Dimension { .. })));
    raw.c[[0, 0]] = f64::NAN;
    assert!(forward(&raw, &batch, &config).is_err());
}

#[test]
fn overflowing_consequents_are_numeric_errors() {
    let config = ModelConfig::new(ModelKind::T1, 2, 1, 1, Reducer::Enumeration).unwrap();
    let (mut raw, batch) = random_case(12, &config, 2);
    raw.a.fill(f64::MAX);
    let batch = MiniBatch::new(batch.x.mapv(|_| 10.0), batch.y).unwrap();
    assert!(matches!(
        forward(&raw, &batch, &config),
        Err(FlsError::Numeric { .. })
    ));
}
