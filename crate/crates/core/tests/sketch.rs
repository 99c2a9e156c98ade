mod common;

use common::{dense_hadamard, dense_sketch, rel_err};
use onebit_fl::linalg;
use onebit_fl::sketch::{fwht_in_place, quantize, ConsensusVector, OneBitSketch, SketchOperator};
use proptest::prelude::*;

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (a, b)) in got.iter().zip(want).enumerate() {
        assert!((a - b).abs() <= tol, "entry {i}: {a} vs {b}");
    }
}

#[test]
fn small_operator_matches_hand_assembly() {
    let op = SketchOperator::new(11, 8, 4).unwrap();
    let h = dense_hadamard(8);
    let w: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
    // √(8/4) · H[rows] · diag(D) · w, written out longhand.
    let want: Vec<f64> = op
        .sample_indices()
        .iter()
        .map(|&r| (0..8).map(|c| h.get(r, c) * op.sign_flips()[c] * w[c]).sum::<f64>() * 2f64.sqrt())
        .collect();
    assert_close(&op.forward(&w).unwrap(), &want, 1e-12);

    let v = [1.0, -2.0, 0.5, 3.0];
    let dense = dense_sketch(&op, false);
    assert_close(&op.adjoint(&v).unwrap(), &dense.transpose_mul_vec(&v), 1e-12);
}

#[test]
fn unpadded_dimension_matches_dense_restriction() {
    for (n, m) in [(3, 2), (5, 5), (13, 4), (33, 30), (100, 10)] {
        let op = SketchOperator::new(n as u64, n, m).unwrap();
        let dense = dense_sketch(&op, false);
        let w: Vec<f64> = (0..n).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let v: Vec<f64> = (0..m).map(|i| ((i * 3) % 4) as f64 - 1.5).collect();
        assert_close(&op.forward(&w).unwrap(), &dense.mul_vec(&w), 1e-12);
        assert_close(&op.adjoint(&v).unwrap(), &dense.transpose_mul_vec(&v), 1e-12);
    }
}

#[test]
fn padded_rows_are_scaled_orthonormal() {
    let op = SketchOperator::new(3, 20, 7).unwrap();
    let gram = dense_sketch(&op, true).gram_rows();
    let ratio = op.padded_dim() as f64 / op.sketch_dim() as f64;
    for i in 0..7 {
        for j in 0..7 {
            let want = if i == j { ratio } else { 0.0 };
            assert!((gram.get(i, j) - want).abs() < 1e-12);
        }
    }
    assert_eq!(op.norm_squared(), ratio);
}

#[test]
fn forward_of_zero_padded_input_matches_padded_operator() {
    let op = SketchOperator::new(9, 12, 5).unwrap();
    let w: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect();
    let mut padded = w.clone();
    padded.resize(op.padded_dim(), 0.0);
    assert_close(&op.forward(&w).unwrap(), &op.padded().forward(&padded).unwrap(), 1e-14);
}

#[test]
fn sketch_is_sign_of_projection() {
    let op = SketchOperator::new(1, 40, 10).unwrap();
    let w: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
    let z = op.forward(&w).unwrap();
    let s = op.sketch(&w).unwrap();
    assert_eq!(s, quantize(&z).unwrap());
    for (i, zi) in z.iter().enumerate() {
        assert_eq!(s.sign(i), if *zi >= 0.0 { 1 } else { -1 });
    }
}

#[test]
fn message_round_trip_through_wire_format() {
    let op = SketchOperator::new(2, 300, 37).unwrap();
    let w: Vec<f64> = (0..300).map(|i| (i as f64 * 1.3).sin()).collect();
    let s = op.sketch(&w).unwrap();
    assert_eq!(OneBitSketch::decode_message(&s.encode_message()).unwrap(), s);
    let v = ConsensusVector::from_entries((0..37).map(|i| (i % 3) as i8 - 1).collect()).unwrap();
    assert_eq!(ConsensusVector::decode_message(&v.encode_message()).unwrap(), v);
}

fn vec_in(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-10.0..10.0f64, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_matches_dense_operator(seed in any::<u64>(), n in 1usize..40, frac in 0.01..1.0f64) {
        let n_pad = n.next_power_of_two();
        let m = ((frac * n_pad as f64).ceil() as usize).clamp(1, n_pad);
        let op = SketchOperator::new(seed, n, m).unwrap();
        let dense = dense_sketch(&op, false);
        let w: Vec<f64> = (0..n).map(|i| ((seed >> (i % 60)) & 7) as f64 - 3.5).collect();
        let got = op.forward(&w).unwrap();
        let want = dense.mul_vec(&w);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-11);
        }
    }

    #[test]
    fn forward_is_linear(seed in any::<u64>(), a in vec_in(50), b in vec_in(50), alpha in -3.0..3.0f64) {
        let op = SketchOperator::new(seed, 50, 9).unwrap();
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + y).collect();
        let lhs = op.forward(&combo).unwrap();
        let fa = op.forward(&a).unwrap();
        let fb = op.forward(&b).unwrap();
        for i in 0..9 {
            prop_assert!((lhs[i] - (alpha * fa[i] + fb[i])).abs() <= 1e-9);
        }
    }

    #[test]
    fn norm_never_exceeds_constant(seed in any::<u64>(), w in vec_in(37)) {
        let op = SketchOperator::new(seed, 37, 11).unwrap();
        let z = op.forward(&w).unwrap();
        prop_assert!(linalg::norm_sq(&z) <= op.norm_squared() * linalg::norm_sq(&w) * (1.0 + 1e-12));
    }

    #[test]
    fn fwht_preserves_norm(x in proptest::collection::vec(-5.0..5.0f64, 64)) {
        let mut y = x.clone();
        fwht_in_place(&mut y).unwrap();
        prop_assert!(rel_err(linalg::norm_sq(&y), linalg::norm_sq(&x), 1e-12) <= 1e-12);
    }
}
