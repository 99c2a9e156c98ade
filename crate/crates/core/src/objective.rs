//! The smoothed, sign-regularized client objective
//!
//! ```text
//! F̃(w; v) = f̂(w) + λ (h_γ(Φw) − ⟨v, Φw⟩) + (μ/2)‖w‖²
//! ∇F̃(w; v) = ∇f̂(w) + λ Φᵀ(tanh(γΦw) − v) + μw
//! ```
//!
//! where `h_γ(z) = (1/γ) Σ log cosh(γ zᵢ)` smooths `‖z‖₁`. The regularizer
//! pulls `sign(Φw)` toward the consensus `v` and is unhalved, i.e. the ½ of
//! the one-sided ℓ1 form is folded into λ.

use log::warn;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ModelSpec;
use crate::sketch::{ConsensusVector, SketchOperator};

/// Beyond this magnitude `tanh` is returned as exactly ±1.
pub const TANH_SATURATION: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Learning rate η.
    pub eta: f64,
    /// Sign-alignment strength λ.
    pub lambda: f64,
    /// ℓ2 penalty μ.
    pub mu: f64,
    /// Smoothing sharpness γ.
    pub gamma: f64,
    /// Local SGD steps per round, R.
    pub local_steps: usize,
    /// Communication rounds, T.
    pub rounds: usize,
    /// Clients aggregated per round, S.
    pub participants: usize,
    pub batch_size: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            eta: 0.1,
            lambda: 0.0005,
            mu: 0.00001,
            gamma: 10000.0,
            local_steps: 5,
            rounds: 100,
            participants: 10,
            batch_size: 32,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad("mu must be non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if self.participants == 0 {
            return bad("participants must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.mu > 0.0 && !self.satisfies_norm_condition() {
            warn!(
                "eta = {} violates eta < 1/(3 mu) = {}; the model-norm bound does not apply",
                self.eta,
                1.0 / (3.0 * self.mu)
            );
        }
        Ok(())
    }

    /// `η < 1/(3μ)`, the step-size condition of the bounded-norm result.
    pub fn satisfies_norm_condition(&self) -> bool {
        self.mu > 0.0 && 3.0 * self.eta * self.mu < 1.0
    }
}

/// `log cosh(x)` without overflow.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// `h_γ(z) = (1/γ) Σ log cosh(γ zᵢ)`.
pub fn logcosh_surrogate(z: &[f64], gamma: f64) -> f64 {
    z.iter().map(|&x| log_cosh(gamma * x)).sum::<f64>() / gamma
}

pub fn tanh_saturated(x: f64) -> f64 {
    if x > TANH_SATURATION {
        1.0
    } else if x < -TANH_SATURATION {
        -1.0
    } else {
        x.tanh()
    }
}

/// `g̃(v, z) = h_γ(z) − ⟨v, z⟩` for a projected model `z = Φw`.
pub fn smoothed_regularizer(z: &[f64], v: &ConsensusVector, gamma: f64) -> f64 {
    let inner: f64 = z.iter().zip(v.entries()).map(|(&a, &b)| a * b as f64).sum();
    logcosh_surrogate(z, gamma) - inner
}

fn check_consensus(op: &SketchOperator, v: &ConsensusVector) -> Result<()> {
    if v.len() != op.sketch_dim() {
        return Err(Error::InvalidArgument(format!(
            "consensus has dimension {}, operator sketches to {}",
            v.len(),
            op.sketch_dim()
        )));
    }
    Ok(())
}

/// `Φᵀ(tanh(γΦw) − v)`, the gradient of `g̃(v, Φw)` in `w`.
pub fn regularizer_grad(op: &SketchOperator, w: &[f64], v: &ConsensusVector, gamma: f64) -> Result<Vec<f64>> {
    check_consensus(op, v)?;
    let z = op.forward(w)?;
    regularizer_grad_from_projection(op, &z, v, gamma)
}

fn regularizer_grad_from_projection(
    op: &SketchOperator,
    z: &[f64],
    v: &ConsensusVector,
    gamma: f64,
) -> Result<Vec<f64>> {
    let residual: Vec<f64> = z
        .iter()
        .zip(v.entries())
        .map(|(&zi, &vi)| tanh_saturated(gamma * zi) - vi as f64)
        .collect();
    op.adjoint(&residual)
}

/// The pieces every client-side evaluation needs.
#[derive(Debug, Clone, Copy)]
pub struct ClientProblem<'a> {
    pub spec: &'a ModelSpec,
    pub op: &'a SketchOperator,
    pub hp: &'a HyperParams,
    pub data: &'a Dataset,
}

impl ClientProblem<'_> {
    /// `F̃(w; v)` on the samples in `idx`.
    pub fn objective(&self, w: &[f64], v: &ConsensusVector, idx: &[usize]) -> Result<f64> {
        let task = self.spec.loss(w, self.data, idx)?;
        Ok(task + self.penalty(w, v)?)
    }

    /// The two regularization terms of `F̃`, which do not depend on data.
    pub fn penalty(&self, w: &[f64], v: &ConsensusVector) -> Result<f64> {
        check_consensus(self.op, v)?;
        let mut total = 0.5 * self.hp.mu * linalg::norm_sq(w);
        if self.hp.lambda != 0.0 {
            let z = self.op.forward(w)?;
            total += self.hp.lambda * smoothed_regularizer(&z, v, self.hp.gamma);
        }
        Ok(total)
    }

    /// `∇F̃(w; v)` on the samples in `idx`; also returns the task loss.
    pub fn loss_and_grad(&self, w: &[f64], v: &ConsensusVector, idx: &[usize]) -> Result<(f64, Vec<f64>)> {
        check_consensus(self.op, v)?;
        let (loss, mut grad) = self.spec.loss_and_grad(w, self.data, idx)?;
        if self.hp.lambda != 0.0 {
            let reg = regularizer_grad(self.op, w, v, self.hp.gamma)?;
            linalg::axpy(self.hp.lambda, &reg, &mut grad);
        }
        if self.hp.mu != 0.0 {
            linalg::axpy(self.hp.mu, w, &mut grad);
        }
        if !linalg::all_finite(&grad) {
            return Err(Error::numeric("client gradient"));
        }
        Ok((loss, grad))
    }

    pub fn grad(&self, w: &[f64], v: &ConsensusVector, idx: &[usize]) -> Result<Vec<f64>> {
        Ok(self.loss_and_grad(w, v, idx)?.1)
    }
}

/// `F̃(w; v)` on `idx`.
pub fn client_objective(
    spec: &ModelSpec,
    op: &SketchOperator,
    w: &[f64],
    v: &ConsensusVector,
    hp: &HyperParams,
    data: &Dataset,
    idx: &[usize],
) -> Result<f64> {
    ClientProblem { spec, op, hp, data }.objective(w, v, idx)
}

/// `∇F̃(w; v)` on `batch`.
pub fn client_grad(
    spec: &ModelSpec,
    op: &SketchOperator,
    w: &[f64],
    v: &ConsensusVector,
    hp: &HyperParams,
    data: &Dataset,
    batch: &[usize],
) -> Result<Vec<f64>> {
    ClientProblem { spec, op, hp, data }.grad(w, v, batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn surrogate_values() {
        assert_eq!(logcosh_surrogate(&[0.0, 0.0], 3.0), 0.0);
        let g = 10000.0;
        let got = logcosh_surrogate(&[1.0], g);
        assert!((got - (1.0 - std::f64::consts::LN_2 / g)).abs() < 1e-12);
        let direct = 2.0 * 0.5f64.cosh().ln();
        assert!((logcosh_surrogate(&[0.5, -0.5], 1.0) - direct).abs() < 1e-15);
        assert!((direct - 0.240_229_013_916_555).abs() < 1e-12);
        // would overflow through cosh directly
        assert_eq!(logcosh_surrogate(&[1e3], 1e4), 1e3 - std::f64::consts::LN_2 / 1e4);
    }

    #[test]
    fn saturation() {
        assert_eq!(tanh_saturated(20.5), 1.0);
        assert_eq!(tanh_saturated(-1e9), -1.0);
        assert_eq!(tanh_saturated(0.3), 0.3f64.tanh());
        assert!((1.0 - 20f64.tanh()) < 1e-17);
    }

    #[test]
    fn surrogate_brackets_l1() {
        let mut r = rng::stream(4, 0);
        let z: Vec<f64> = (0..16).map(|_| r.random_range(-2.0..2.0)).collect();
        let v = ConsensusVector::from_entries((0..16).map(|i| (i % 3) as i8 - 1).collect()).unwrap();
        let l1: f64 = z.iter().map(|x| x.abs()).sum();
        let inner: f64 = z.iter().zip(v.entries()).map(|(a, &b)| a * b as f64).sum();
        for gamma in [1.0, 10.0, 100.0, 10000.0] {
            let g = smoothed_regularizer(&z, &v, gamma);
            assert!(g >= -inner);
            assert!((g - (l1 - inner)).abs() <= 16.0 * std::f64::consts::LN_2 / gamma + 1e-12);
        }
    }

    #[test]
    fn aligned_signs_cancel() {
        let op = SketchOperator::new(2, 12, 5).unwrap();
        let w: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let z = op.forward(&w).unwrap();
        let v = ConsensusVector::from_entries(z.iter().map(|&x| if x >= 0.0 { 1 } else { -1 }).collect()).unwrap();
        let g = regularizer_grad(&op, &w, &v, 1e6).unwrap();
        assert!(linalg::norm(&g) < 1e-12, "{g:?}");
    }

    #[test]
    fn zero_consensus_is_pure_shrinkage() {
        let op = SketchOperator::new(2, 12, 5).unwrap();
        let w: Vec<f64> = (0..12).map(|i| i as f64 - 5.5).collect();
        let g = regularizer_grad(&op, &w, &ConsensusVector::zeros(5), 3.0).unwrap();
        let t: Vec<f64> = op.forward(&w).unwrap().iter().map(|z| (3.0 * z).tanh()).collect();
        assert_eq!(g, op.adjoint(&t).unwrap());
        // shrinkage: the step opposes w along Φ
        assert!(linalg::dot(&g, &w) > 0.0);
    }

    #[test]
    fn mismatched_consensus_rejected() {
        let op = SketchOperator::new(2, 12, 5).unwrap();
        assert!(matches!(
            regularizer_grad(&op, &[0.0; 12], &ConsensusVector::zeros(4), 1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn degenerate_hyperparameters_reduce_to_task_loss() {
        let data = Dataset::new(2, vec![1.0, 2.0, -1.0, 0.5], vec![0.0, 1.0]).unwrap();
        let spec = ModelSpec::logistic_regression(2, 2);
        let op = SketchOperator::new(1, 6, 2).unwrap();
        let hp = HyperParams {
            lambda: 0.0,
            mu: 0.0,
            ..HyperParams::default()
        };
        let w = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
        let v = ConsensusVector::from_entries(vec![1, -1]).unwrap();
        let (task, task_grad) = spec.loss_and_grad(&w, &data, &[0, 1]).unwrap();
        assert_eq!(client_objective(&spec, &op, &w, &v, &hp, &data, &[0, 1]).unwrap(), task);
        assert_eq!(client_grad(&spec, &op, &w, &v, &hp, &data, &[0, 1]).unwrap(), task_grad);

        let hp = HyperParams::default();
        let zero = ConsensusVector::zeros(2);
        let at_zero = client_objective(&spec, &op, &[0.0; 6], &zero, &hp, &data, &[0, 1]).unwrap();
        assert_eq!(at_zero, spec.loss(&[0.0; 6], &data, &[0, 1]).unwrap());
    }

    #[test]
    fn norm_condition() {
        let hp = HyperParams {
            eta: 0.1,
            mu: 1.0,
            ..HyperParams::default()
        };
        assert!(hp.satisfies_norm_condition());
        let hp = HyperParams {
            eta: 0.5,
            mu: 1.0,
            ..HyperParams::default()
        };
        assert!(!hp.satisfies_norm_condition());
        assert!(hp.validate().is_ok());
        assert!(HyperParams {
            gamma: 0.0,
            ..HyperParams::default()
        }
        .validate()
        .is_err());
    }
}
