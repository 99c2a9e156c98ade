//! Structured random projection `Φ = sqrt(n'/m) · S · H · D` and its adjoint.
//!
//! The input of length `n` is zero padded to `n' = 2^⌈log₂ n⌉`, multiplied
//! by a random ±1 diagonal `D`, transformed by the orthonormal
//! Walsh–Hadamard matrix `H`, and `m` distinct coordinates are kept and
//! rescaled by `sqrt(n'/m)`. Nothing dense is ever formed; both directions
//! cost `O(n' log n')`.
//!
//! The kept rows of `HD` are orthonormal, so on the padded space
//! `ΦΦᵀ = (n'/m)·I_m`. Restricted to the first `n` columns the spectral norm
//! is at most `sqrt(n'/m)`.

mod bits;
mod fwht;

pub use bits::{ConsensusVector, DownlinkMode, OneBitSketch};
pub use fwht::fwht_in_place;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Seed-reproducible sketch operator shared by clients and server.
///
/// `sign_flips` and `sample_indices` are a pure function of `(seed, n, m)`:
/// each is drawn from its own [`rng`] stream under `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchOperator {
    seed: u64,
    n: usize,
    n_pad: usize,
    m: usize,
    sign_flips: Vec<f64>,
    sample_indices: Vec<usize>,
    scale: f64,
}

impl SketchOperator {
    pub fn new(seed: u64, n: usize, m: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("model dimension n must be positive".into()));
        }
        let n_pad = n.next_power_of_two();
        if m == 0 || m > n_pad {
            return Err(Error::InvalidConfig(format!(
                "sketch dimension m = {m} must lie in [1, {n_pad}] for n = {n}"
            )));
        }

        let mut flips_rng = rng::stream(seed, rng::SIGN_FLIPS);
        let sign_flips = (0..n_pad)
            .map(|_| if flips_rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();

        let mut idx_rng = rng::stream(seed, rng::SAMPLE_INDICES);
        let mut sample_indices = index::sample(&mut idx_rng, n_pad, m).into_vec();
        sample_indices.sort_unstable();

        // n_pad / m is formed from integers; one rounding happens in sqrt.
        let scale = (n_pad as f64 / m as f64).sqrt();

        Ok(Self {
            seed,
            n,
            n_pad,
            m,
            sign_flips,
            sample_indices,
            scale,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Model dimension.
    pub fn input_dim(&self) -> usize {
        self.n
    }

    /// Padded dimension, the smallest power of two `>= n`.
    pub fn padded_dim(&self) -> usize {
        self.n_pad
    }

    /// Sketch dimension.
    pub fn sketch_dim(&self) -> usize {
        self.m
    }

    pub fn sign_flips(&self) -> &[f64] {
        &self.sign_flips
    }

    pub fn sample_indices(&self) -> &[usize] {
        &self.sample_indices
    }

    /// `sqrt(n_pad / m)`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `C_Φ² = n_pad / m`. This is exactly `‖Φ‖²` for the padded operator
    /// (see [`padded`](Self::padded)) and an upper bound for `Φ` itself,
    /// whose columns are the first `n` of the padded one.
    pub fn norm_squared(&self) -> f64 {
        self.n_pad as f64 / self.m as f64
    }

    /// The same transform acting on all `n_pad` coordinates, i.e. on the
    /// zero-padded model directly. Its rows are orthogonal with squared norm
    /// `n_pad / m`. Identical to `self` when `n` is a power of two.
    pub fn padded(&self) -> SketchOperator {
        SketchOperator {
            n: self.n_pad,
            ..self.clone()
        }
    }

    /// `Φw`.
    pub fn forward(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut buf = vec![0.0; self.n_pad];
        let mut out = vec![0.0; self.m];
        self.forward_into(w, &mut buf, &mut out)?;
        Ok(out)
    }

    /// `Φw` using a caller-owned scratch buffer of length `n_pad`.
    pub fn forward_into(&self, w: &[f64], scratch: &mut [f64], out: &mut [f64]) -> Result<()> {
        self.check_len("forward input", w.len(), self.n)?;
        self.check_len("forward scratch", scratch.len(), self.n_pad)?;
        self.check_len("forward output", out.len(), self.m)?;
        for (i, s) in scratch.iter_mut().enumerate() {
            *s = if i < self.n { w[i] * self.sign_flips[i] } else { 0.0 };
        }
        fwht_in_place(scratch)?;
        for (o, &j) in out.iter_mut().zip(&self.sample_indices) {
            *o = self.scale * scratch[j];
        }
        Ok(())
    }

    /// `Φᵀv`.
    pub fn adjoint(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut buf = vec![0.0; self.n_pad];
        let mut out = vec![0.0; self.n];
        self.adjoint_into(v, &mut buf, &mut out)?;
        Ok(out)
    }

    /// `Φᵀv` using a caller-owned scratch buffer of length `n_pad`.
    pub fn adjoint_into(&self, v: &[f64], scratch: &mut [f64], out: &mut [f64]) -> Result<()> {
        self.check_len("adjoint input", v.len(), self.m)?;
        self.check_len("adjoint scratch", scratch.len(), self.n_pad)?;
        self.check_len("adjoint output", out.len(), self.n)?;
        scratch.fill(0.0);
        for (&x, &j) in v.iter().zip(&self.sample_indices) {
            scratch[j] = self.scale * x;
        }
        fwht_in_place(scratch)?;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.sign_flips[i] * scratch[i];
        }
        Ok(())
    }

    /// One-bit sketch `sign(Φw)` of a model.
    pub fn sketch(&self, w: &[f64]) -> Result<OneBitSketch> {
        quantize(&self.forward(w)?)
    }

    fn check_len(&self, what: &str, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::InvalidArgument(format!(
                "{what} has length {got}, expected {want}"
            )));
        }
        Ok(())
    }
}

/// Elementwise sign with `sign(0) = +1`.
pub fn quantize(z: &[f64]) -> Result<OneBitSketch> {
    if let Some(i) = z.iter().position(|x| x.is_nan()) {
        return Err(Error::numeric(format!("quantize: NaN at coordinate {i}")));
    }
    Ok(OneBitSketch::from_positive(z.len(), |i| z[i] >= 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    #[test]
    fn padding_and_scale() {
        assert_eq!(SketchOperator::new(7, 3, 2).unwrap().padded_dim(), 4);
        assert_eq!(SketchOperator::new(7, 1024, 103).unwrap().padded_dim(), 1024);
        let op = SketchOperator::new(7, 6, 2).unwrap();
        assert_eq!(op.padded_dim(), 8);
        assert_eq!(op.scale(), 2.0);
        assert_eq!(op.norm_squared() * op.sketch_dim() as f64, op.padded_dim() as f64);
    }

    #[test]
    fn invalid_dimensions() {
        assert!(matches!(SketchOperator::new(1, 0, 1), Err(Error::InvalidConfig(_))));
        assert!(matches!(SketchOperator::new(1, 5, 9), Err(Error::InvalidConfig(_))));
        assert!(matches!(SketchOperator::new(1, 5, 0), Err(Error::InvalidConfig(_))));
        // m may exceed n as long as it fits in the padded space.
        assert!(SketchOperator::new(1, 5, 8).is_ok());
    }

    #[test]
    fn indices_sorted_distinct_and_reproducible() {
        let a = SketchOperator::new(42, 1000, 300).unwrap();
        let b = SketchOperator::new(42, 1000, 300).unwrap();
        assert_eq!(a, b);
        assert!(a.sample_indices().windows(2).all(|w| w[0] < w[1]));
        assert!(a.sample_indices().iter().all(|&j| j < a.padded_dim()));
        assert!(a.sign_flips().iter().all(|&s| s == 1.0 || s == -1.0));
        let c = SketchOperator::new(43, 1000, 300).unwrap();
        assert_ne!(a.sign_flips(), c.sign_flips());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let op = SketchOperator::new(3, 10, 4).unwrap();
        assert!(matches!(op.forward(&[0.0; 9]), Err(Error::InvalidArgument(_))));
        assert!(matches!(op.adjoint(&[0.0; 5]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_maps_to_zero() {
        let op = SketchOperator::new(3, 10, 4).unwrap();
        assert!(op.forward(&[0.0; 10]).unwrap().iter().all(|&x| x == 0.0));
        assert!(op.adjoint(&[0.0; 4]).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(&[0.5, -2.0]).unwrap().signs(), vec![1, -1]);
        assert_eq!(quantize(&[0.0]).unwrap().signs(), vec![1]);
        assert_eq!(quantize(&[-0.0]).unwrap().signs(), vec![1]);
        assert!(quantize(&[1.0, f64::NAN]).unwrap_err().is_numeric());
    }

    proptest! {
        #[test]
        fn forward_is_homogeneous(
            seed in any::<u64>(),
            n in 1usize..200,
            a in -10.0f64..10.0,
            raw in proptest::collection::vec(-1.0f64..1.0, 200),
        ) {
            let op = SketchOperator::new(seed, n, (n / 3).max(1)).unwrap();
            let w = &raw[..n];
            let scaled: Vec<f64> = w.iter().map(|x| a * x).collect();
            let lhs = op.forward(&scaled).unwrap();
            let rhs = op.forward(w).unwrap();
            for (l, r) in lhs.iter().zip(&rhs) {
                prop_assert!((l - a * r).abs() <= 1e-12 * (1.0 + r.abs() * a.abs()));
            }
        }

        #[test]
        fn adjoint_identity(
            seed in any::<u64>(),
            n in 1usize..300,
            mfrac in 0.01f64..1.0,
        ) {
            let op = SketchOperator::new(seed, n, ((n.next_power_of_two() as f64 * mfrac) as usize).max(1)).unwrap();
            let mut r = crate::rng::stream(seed, 99);
            let w: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..op.sketch_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
            let fw = op.forward(&w).unwrap();
            let atv = op.adjoint(&v).unwrap();
            let lhs: f64 = fw.iter().zip(&v).map(|(a, b)| a * b).sum();
            let rhs: f64 = w.iter().zip(&atv).map(|(a, b)| a * b).sum();
            let scale = crate::linalg::norm(&fw) * crate::linalg::norm(&v);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * scale.max(1e-300));
        }

        #[test]
        fn quantize_is_scale_invariant(
            z in proptest::collection::vec(-5.0f64..5.0, 1..64),
            c in 1e-3f64..1e3,
        ) {
            let s = quantize(&z).unwrap();
            prop_assert!(s.signs().iter().all(|&x| x == 1 || x == -1));
            let scaled: Vec<f64> = z.iter().map(|x| c * x).collect();
            prop_assert_eq!(quantize(&scaled).unwrap(), s);
        }
    }
}
