#![allow(clippy::needless_range_loop)]

mod common;

use common::{central_difference, rel_err};
use onebit_fl::data::{generate_synthetic, SyntheticTask};
use onebit_fl::linalg;
use onebit_fl::model::{Activation, ModelSpec};
use onebit_fl::objective::{regularizer_grad, smoothed_regularizer, ClientProblem, HyperParams};
use onebit_fl::rng;
use onebit_fl::sketch::{ConsensusVector, SketchOperator};
use proptest::prelude::*;
use rand::Rng;

fn random_consensus(m: usize, rng: &mut impl Rng) -> ConsensusVector {
    ConsensusVector::from_entries((0..m).map(|_| rng.random_range(-1..=1)).collect()).unwrap()
}

fn check_task_gradient(spec: &ModelSpec, task: SyntheticTask, tol: f64) {
    let fed = generate_synthetic(task, 1, 40, spec.input_dim(), 0.0, 1).unwrap();
    let data = &fed.data.dataset;
    let mut r = rng::stream(2, 0);
    let batch: Vec<usize> = (0..12).collect();
    let n = spec.num_params();
    for _ in 0..3 {
        let w: Vec<f64> = (0..n).map(|_| r.random_range(-0.6..0.6)).collect();
        let (_, g) = spec.loss_and_grad(&w, data, &batch).unwrap();
        for i in 0..n {
            let fd = central_difference(|x| spec.loss(x, data, &batch).unwrap(), &w, i, 1e-5);
            assert!(rel_err(g[i], fd, 1e-3) <= tol, "param {i}: {} vs {fd}", g[i]);
        }
    }
}

#[test]
fn linear_regression_gradient() {
    check_task_gradient(&ModelSpec::linear_regression(6), SyntheticTask::Linear, 1e-6);
}

#[test]
fn logistic_regression_gradient() {
    check_task_gradient(&ModelSpec::logistic_regression(6, 2), SyntheticTask::Logistic, 1e-6);
}

#[test]
fn tanh_mlp_gradient() {
    check_task_gradient(
        &ModelSpec::mlp(vec![5, 7, 4, 2], Activation::Tanh),
        SyntheticTask::Logistic,
        1e-6,
    );
}

#[test]
fn relu_mlp_gradient_away_from_kinks() {
    // Central differences straddle a kink with probability ~ eps, so the
    // tolerance is loose but still catches a wrong backward pass.
    check_task_gradient(
        &ModelSpec::mlp(vec![5, 8, 2], Activation::Relu),
        SyntheticTask::Logistic,
        1e-4,
    );
}

#[test]
fn regularizer_gradient_matches_differences() {
    let mut r = rng::stream(3, 0);
    for gamma in [1.0, 10.0, 100.0] {
        let op = SketchOperator::new(4, 30, 8).unwrap();
        let v = random_consensus(8, &mut r);
        let w: Vec<f64> = (0..30).map(|_| r.random_range(-0.3..0.3)).collect();
        let g = regularizer_grad(&op, &w, &v, gamma).unwrap();
        let value = |x: &[f64]| smoothed_regularizer(&op.forward(x).unwrap(), &v, gamma);
        for i in 0..30 {
            let fd = central_difference(value, &w, i, 1e-5);
            assert!(
                rel_err(g[i], fd, 1e-3) <= 1e-5,
                "gamma {gamma}, coord {i}: {} vs {fd}",
                g[i]
            );
        }
    }
}

#[test]
fn full_objective_gradient_with_every_term() {
    let spec = ModelSpec::mlp(vec![4, 6, 2], Activation::Tanh);
    let fed = generate_synthetic(SyntheticTask::Logistic, 1, 30, 4, 0.0, 8).unwrap();
    let n = spec.num_params();
    let op = SketchOperator::new(5, n, 10).unwrap();
    let hp = HyperParams {
        lambda: 0.7,
        mu: 0.05,
        gamma: 10.0,
        ..HyperParams::default()
    };
    let problem = ClientProblem {
        spec: &spec,
        op: &op,
        hp: &hp,
        data: &fed.data.dataset,
    };
    let mut r = rng::stream(6, 0);
    let v = random_consensus(10, &mut r);
    let w: Vec<f64> = (0..n).map(|_| r.random_range(-0.5..0.5)).collect();
    let batch: Vec<usize> = (0..20).collect();
    let g = problem.grad(&w, &v, &batch).unwrap();
    for i in 0..n {
        let fd = central_difference(|x| problem.objective(x, &v, &batch).unwrap(), &w, i, 1e-5);
        assert!(rel_err(g[i], fd, 1e-3) <= 1e-6, "coord {i}: {} vs {fd}", g[i]);
    }
}

#[test]
fn regularizer_gradient_points_outward_when_saturated() {
    // With every |γ·z_i| past the saturation point, ⟨w, ∇⟩ = Σ |z_i| − v_i z_i ≥ 0.
    let op = SketchOperator::new(7, 64, 16).unwrap();
    let mut r = rng::stream(7, 0);
    let gamma = 1e4;
    for _ in 0..50 {
        let w: Vec<f64> = (0..64).map(|_| r.random_range(-1.0..1.0)).collect();
        let z = op.forward(&w).unwrap();
        if z.iter().any(|zi| (gamma * zi).abs() <= 20.0) {
            continue;
        }
        let v = random_consensus(16, &mut r);
        let g = regularizer_grad(&op, &w, &v, gamma).unwrap();
        assert!(linalg::dot(&w, &g) >= -1e-12);
    }
}

proptest! {
    // In general ⟨w, ∇⟩ = Σ z_i(tanh(γz_i) − v_i) ≥ −Σ|z_i|(1 − tanh(γ|z_i|)),
    // and x(1 − tanh x) ≤ 2x·e^{−2x} ≤ 1/e, giving the floor −m/(eγ).
    #[test]
    fn regularizer_inner_product_floor(
        seed in any::<u64>(),
        scale in 1e-6..1.0f64,
        gamma in 1.0..1e4f64,
        entries in proptest::collection::vec(-1i8..=1, 12),
    ) {
        let op = SketchOperator::new(seed, 40, 12).unwrap();
        let mut r = rng::stream(seed, 1);
        let w: Vec<f64> = (0..40).map(|_| scale * r.random_range(-1.0..1.0)).collect();
        let v = ConsensusVector::from_entries(entries).unwrap();
        let g = regularizer_grad(&op, &w, &v, gamma).unwrap();
        let floor = -12.0 / (std::f64::consts::E * gamma);
        prop_assert!(linalg::dot(&w, &g) >= floor - 1e-12);
    }
}
