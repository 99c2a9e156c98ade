//! Measured counterparts of the analysis constants (smoothness, gradient
//! moments, model-norm ceiling, sampling variance, convergence bound) and a
//! self-check suite that compares them.
//!
//! Every comparison here is empirical: expectations are replaced by sample
//! means over probes or Monte Carlo trials, and unknown constants such as
//! `σ²` and `G²` are estimated rather than given.

use rand::seq::index;
use rand::Rng;
use serde::Serialize;

use crate::data::{generate_synthetic, Dataset, SyntheticTask};
use crate::error::{Error, Result};
use crate::federation::{self, Algorithm, FederationConfig};
use crate::linalg;
use crate::model::{Activation, ModelSpec};
use crate::objective::{ClientProblem, HyperParams};
use crate::rng::{self, StreamRng};
use crate::server;
use crate::sketch::{fwht_in_place, ConsensusVector, OneBitSketch, SketchOperator};

/// `L_F = L + λγ·C_Φ² + μ` with `C_Φ² = n_pad/m`.
pub fn smoothness_constant(task_smoothness: f64, hp: &HyperParams, op: &SketchOperator) -> f64 {
    task_smoothness + hp.lambda * hp.gamma * op.norm_squared() + hp.mu
}

/// Largest-magnitude Hessian eigenvalue of the task loss at `w`, by power
/// iteration on central differences of the gradient.
pub fn estimate_task_smoothness(
    spec: &ModelSpec,
    data: &Dataset,
    idx: &[usize],
    w: &[f64],
    iterations: usize,
    rng: &mut StreamRng,
) -> Result<f64> {
    let n = w.len();
    let mut dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = linalg::norm(&dir);
    dir.iter_mut().for_each(|x| *x /= norm);
    let eps = 1e-4 * linalg::norm(w).max(1.0);
    let mut estimate = 0.0;
    for _ in 0..iterations.max(1) {
        let plus: Vec<f64> = w.iter().zip(&dir).map(|(a, d)| a + eps * d).collect();
        let minus: Vec<f64> = w.iter().zip(&dir).map(|(a, d)| a - eps * d).collect();
        let gp = spec.loss_and_grad(&plus, data, idx)?.1;
        let gm = spec.loss_and_grad(&minus, data, idx)?.1;
        let hv: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        estimate = linalg::norm(&hv);
        if estimate == 0.0 {
            return Ok(0.0);
        }
        dir = hv.into_iter().map(|x| x / estimate).collect();
    }
    Ok(estimate)
}

/// Largest eigenvalue of `ΦΦᵀ` by power iteration through the fast
/// transforms. Exactly `n_pad/m` for a padded operator, at most that
/// otherwise.
pub fn operator_norm_squared(op: &SketchOperator, iterations: usize, rng: &mut StreamRng) -> Result<f64> {
    let mut x: Vec<f64> = (0..op.sketch_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut estimate = 0.0;
    for _ in 0..iterations.max(1) {
        let norm = linalg::norm(&x);
        x.iter_mut().for_each(|v| *v /= norm);
        let y = op.forward(&op.adjoint(&x)?)?;
        estimate = linalg::dot(&x, &y);
        x = y;
    }
    Ok(estimate)
}

/// Unweighted mean of sketches.
fn sketch_mean(sketches: &[OneBitSketch]) -> Vec<f64> {
    let m = sketches[0].len();
    let mut mean = vec![0.0; m];
    for s in sketches {
        linalg::axpy(1.0 / sketches.len() as f64, &s.to_f64(), &mut mean);
    }
    mean
}

/// `(K−S)/(S·K·(K−1)) · Σ_k ‖z_k − z̄‖²`, the variance of the mean of `S`
/// sketches drawn uniformly without replacement. Zero when `S = K`.
pub fn sampling_variance_bound(sketches: &[OneBitSketch], participants: usize) -> f64 {
    let k = sketches.len();
    if k <= 1 || participants >= k {
        return 0.0;
    }
    let mean = sketch_mean(sketches);
    let spread: f64 = sketches
        .iter()
        .map(|s| {
            let d: f64 = s.to_f64().iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!(d <= 4.0 * mean.len() as f64 + 1e-9, "sketch spread {d} exceeds 4m");
            d
        })
        .sum();
    let (s, k) = (participants as f64, k as f64);
    (k - s) / (s * k * (k - 1.0)) * spread
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SamplingVarianceReport {
    /// Monte Carlo mean of `‖(1/S)Σ_{k∈S} z_k − z̄‖²`.
    pub empirical: f64,
    /// Standard error of that mean.
    pub std_error: f64,
    pub bound: f64,
    /// `empirical / bound`, or 1 when both are zero.
    pub ratio: f64,
    pub trials: usize,
}

impl SamplingVarianceReport {
    /// Whether the estimate is within `sigmas` standard errors of the bound.
    pub fn consistent(&self, sigmas: f64) -> bool {
        (self.empirical - self.bound).abs() <= sigmas * self.std_error + 1e-12
    }
}

pub fn sampling_variance_check(
    sketches: &[OneBitSketch],
    participants: usize,
    trials: usize,
    rng: &mut StreamRng,
) -> Result<SamplingVarianceReport> {
    if sketches.is_empty() {
        return Err(Error::InvalidArgument("no sketches".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is needed".into()));
    }
    let k = sketches.len();
    let mean = sketch_mean(sketches);
    let z: Vec<Vec<f64>> = sketches.iter().map(|s| s.to_f64()).collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        let chosen = server::sample_clients(k, participants, rng)?;
        let mut avg = vec![0.0; mean.len()];
        for &c in &chosen {
            linalg::axpy(1.0 / participants as f64, &z[c], &mut avg);
        }
        let d: f64 = avg.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
        sum += d;
        sum_sq += d * d;
    }
    let t = trials as f64;
    let empirical = sum / t;
    let var = if trials > 1 {
        ((sum_sq - t * empirical * empirical) / (t - 1.0)).max(0.0)
    } else {
        0.0
    };
    let bound = sampling_variance_bound(sketches, participants);
    Ok(SamplingVarianceReport {
        empirical,
        std_error: (var / t).sqrt(),
        bound,
        ratio: if bound == 0.0 && empirical == 0.0 {
            1.0
        } else {
            empirical / bound
        },
        trials,
    })
}

/// `(Δ_max, E_S)` from the largest model norm seen and each round's full
/// set of client sketches.
pub fn theorem_error_terms(
    hp: &HyperParams,
    op: &SketchOperator,
    max_model_norm: f64,
    sketches_per_round: &[Vec<OneBitSketch>],
) -> (f64, f64) {
    let delta = federation::delta_max(hp.lambda, op.sketch_dim(), op.norm_squared().sqrt(), max_model_norm);
    let e_s = if sketches_per_round.is_empty() {
        0.0
    } else {
        sketches_per_round
            .iter()
            .map(|s| federation::sampling_error_summand(s, hp.participants))
            .sum::<f64>()
            / sketches_per_round.len() as f64
    };
    (delta, e_s)
}

/// The ceiling `W² = max(‖w⁰‖², C′/((1−α)(1−α^R)))` on `E‖w‖²`, with
/// `α = 1 − ημ(1 − 3ημ)` and `C′ = (η/μ + 3η²)G² + 3η²λ²(2C_Φ√m)²`.
/// `None` when `μ = 0` or `η ≥ 1/(3μ)`, where no ceiling follows.
pub fn model_norm_bound(
    hp: &HyperParams,
    initial_norm_sq: f64,
    grad_second_moment: f64,
    op: &SketchOperator,
) -> Option<f64> {
    if !hp.satisfies_norm_condition() || hp.local_steps == 0 {
        return None;
    }
    let (eta, mu, lambda) = (hp.eta, hp.mu, hp.lambda);
    let alpha = 1.0 - eta * mu * (1.0 - 3.0 * eta * mu);
    let reg = 2.0 * op.norm_squared().sqrt() * (op.sketch_dim() as f64).sqrt();
    let c_prime = (eta / mu + 3.0 * eta * eta) * grad_second_moment + 3.0 * eta * eta * lambda * lambda * reg * reg;
    let steady = c_prime / ((1.0 - alpha) * (1.0 - alpha.powi(hp.local_steps as i32)));
    Some(initial_norm_sq.max(steady))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientConstants {
    /// Largest mini-batch gradient variance over probes, `σ̂²`.
    pub variance: f64,
    /// Largest mini-batch gradient second moment over probes, `Ĝ²`.
    pub second_moment: f64,
}

/// Estimates `σ²` and `G²` of the task loss. Each probe is a model and the
/// training indices it is evaluated on; `batches` mini-batches are drawn
/// per probe.
pub fn estimate_gradient_constants(
    spec: &ModelSpec,
    data: &Dataset,
    probes: &[(&[f64], &[usize])],
    batch_size: usize,
    batches: usize,
    rng: &mut StreamRng,
) -> Result<GradientConstants> {
    let mut out = GradientConstants {
        variance: 0.0,
        second_moment: 0.0,
    };
    for &(w, idx) in probes {
        if idx.len() < batch_size || batch_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "probe with {} samples cannot supply batches of {batch_size}",
                idx.len()
            )));
        }
        let full = spec.loss_and_grad(w, data, idx)?.1;
        let mut var = 0.0;
        let mut second = 0.0;
        for _ in 0..batches.max(1) {
            let batch: Vec<usize> = index::sample(rng, idx.len(), batch_size)
                .into_iter()
                .map(|i| idx[i])
                .collect();
            let g = spec.loss_and_grad(w, data, &batch)?.1;
            second += linalg::norm_sq(&g);
            var += g.iter().zip(&full).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        let b = batches.max(1) as f64;
        out.variance = out.variance.max(var / b);
        out.second_moment = out.second_moment.max(second / b);
    }
    Ok(out)
}

/// Inputs of the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremInputs {
    pub initial_potential: f64,
    pub potential_lower_bound: f64,
    pub eta: f64,
    pub local_steps: usize,
    pub rounds: usize,
    pub smoothness: f64,
    pub gradient_variance: f64,
    pub delta_max: f64,
    pub lambda: f64,
    pub sampling_error: f64,
}

/// `(Ψ⁰ − F*)/(c₁T) + η²RL_Fσ²/(2c₁) + Δ_max/c₁ + λE_S/c₁` with
/// `c₁ = ηR(1 − ηL_F/2)`. `None` unless `c₁ > 0` and `T, R > 0`.
pub fn theorem_rhs(x: &TheoremInputs) -> Option<f64> {
    let r = x.local_steps as f64;
    let c1 = x.eta * r * (1.0 - x.eta * x.smoothness / 2.0);
    if x.rounds == 0 || x.local_steps == 0 || c1 <= 0.0 {
        return None;
    }
    Some(
        (x.initial_potential - x.potential_lower_bound) / (c1 * x.rounds as f64)
            + x.eta * x.eta * r * x.smoothness * x.gradient_variance / (2.0 * c1)
            + x.delta_max / c1
            + x.lambda * x.sampling_error / c1,
    )
}

/// A lower bound on the potential when task losses are non-negative:
/// `h_γ(z) − ⟨v, z⟩ ≥ −m·ln2/γ` for `v ∈ {−1,0,1}^m`.
pub fn potential_lower_bound(hp: &HyperParams, m: usize) -> f64 {
    -hp.lambda * m as f64 * std::f64::consts::LN_2 / hp.gamma
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub bound: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub seed: u64,
    pub all_passed: bool,
    pub checks: Vec<Check>,
}

fn check(name: &str, passed: bool, measured: f64, bound: f64, note: impl Into<String>) -> Check {
    Check {
        name: name.to_string(),
        passed,
        measured,
        bound,
        note: note.into(),
    }
}

fn random_sketch(m: usize, rng: &mut StreamRng) -> OneBitSketch {
    let signs: Vec<i8> = (0..m).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
    OneBitSketch::from_signs(&signs).expect("nonempty")
}

/// Runs every self-check and collects the results.
pub fn run_check_suite(seed: u64) -> Result<CheckReport> {
    let mut checks = Vec::new();
    let mut r = rng::stream(seed, rng::EVAL + 1);

    // Adjoint identity over random shapes.
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = r.random_range(3..=2048);
        let op = SketchOperator::new(r.random(), n, r.random_range(1..=n))?;
        let w: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..op.sketch_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
        let fw = op.forward(&w)?;
        let lhs = linalg::dot(&fw, &v);
        let rhs = linalg::dot(&w, &op.adjoint(&v)?);
        let denom = linalg::norm(&fw) * linalg::norm(&v);
        if denom > 0.0 {
            worst = worst.max((lhs - rhs).abs() / denom);
        }
    }
    checks.push(check(
        "sketch adjoint identity",
        worst <= 1e-10,
        worst,
        1e-10,
        "max relative gap over 50 random shapes",
    ));

    // Spectral norm of ΦΦᵀ.
    let op = SketchOperator::new(seed, 1000, 100)?;
    let exact = op.norm_squared();
    let est = operator_norm_squared(&op.padded(), 20, &mut r)?;
    let rel = (est - exact).abs() / exact;
    checks.push(check(
        "sketch spectral norm",
        rel <= 1e-6,
        est,
        exact,
        "power iteration on the padded ΦΦᵀ vs n_pad/m, n = 1000, m = 100",
    ));
    let est = operator_norm_squared(&op, 200, &mut r)?;
    checks.push(check(
        "sketch spectral norm, unpadded",
        est <= exact * (1.0 + 1e-9),
        est,
        exact,
        "dropping the 24 padding columns can only shrink the norm",
    ));

    // FWHT is an involution.
    let mut x: Vec<f64> = (0..256).map(|_| r.random_range(-1.0..1.0)).collect();
    let orig = x.clone();
    fwht_in_place(&mut x)?;
    fwht_in_place(&mut x)?;
    let err = x.iter().zip(&orig).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    checks.push(check(
        "hadamard involution",
        err <= 1e-12,
        err,
        1e-12,
        "H·H·x = x for a length-256 vector",
    ));

    // Sampling variance equality.
    for (k, s) in [(20, 5), (20, 10), (4, 2)] {
        let sketches: Vec<OneBitSketch> = (0..k).map(|_| random_sketch(64, &mut r)).collect();
        let rep = sampling_variance_check(&sketches, s, 20_000, &mut r)?;
        checks.push(check(
            &format!("client sampling variance K={k} S={s}"),
            rep.consistent(3.0),
            rep.empirical,
            rep.bound,
            format!(
                "Monte Carlo mean with standard error {:.3e} over {} trials",
                rep.std_error, rep.trials
            ),
        ));
    }

    // Aggregation attains the weighted sign-mismatch minimum.
    let mut gap: f64 = 0.0;
    for _ in 0..20 {
        let m = r.random_range(1..=8);
        let k = r.random_range(1..=6);
        let sketches: Vec<OneBitSketch> = (0..k).map(|_| random_sketch(m, &mut r)).collect();
        let weights: Vec<f64> = (0..k).map(|_| r.random_range(0.1..1.0)).collect();
        let pairs: Vec<(&OneBitSketch, f64)> = sketches.iter().zip(weights.iter().copied()).collect();
        let v = server::aggregate(&pairs)?;
        let objective = |cand: &[f64]| -> f64 {
            pairs
                .iter()
                .map(|(s, p)| p * s.to_f64().iter().zip(cand).map(|(z, c)| (-z * c).max(0.0)).sum::<f64>())
                .sum()
        };
        let best = (0..1u32 << m)
            .map(|mask| {
                let cand: Vec<f64> = (0..m).map(|j| if mask >> j & 1 == 1 { 1.0 } else { -1.0 }).collect();
                objective(&cand)
            })
            .fold(f64::INFINITY, f64::min);
        // A zero entry is co-optimal with both signs; score it as +1.
        let chosen: Vec<f64> = v.entries().iter().map(|&e| if e >= 0 { 1.0 } else { -1.0 }).collect();
        gap = gap.max(objective(&chosen) - best);
    }
    checks.push(check(
        "server aggregation optimality",
        gap <= 1e-9,
        gap,
        1e-9,
        "excess over the brute-force minimum, m ≤ 8",
    ));

    // Gradients against central differences.
    let fd = finite_difference_check(seed, &mut r)?;
    checks.push(check(
        "client gradient",
        fd <= 1e-5,
        fd,
        1e-5,
        "largest relative error against central differences at γ = 10",
    ));

    // Surrogate approximation of ‖z‖₁.
    let z: Vec<f64> = (0..32).map(|_| r.random_range(-1.0..1.0)).collect();
    let l1: f64 = z.iter().map(|x| x.abs()).sum();
    let mut worst_gap: f64 = 0.0;
    let mut worst_slack: f64 = f64::INFINITY;
    for gamma in [1.0, 10.0, 100.0, 10000.0] {
        let h = crate::objective::logcosh_surrogate(&z, gamma);
        worst_gap = worst_gap.max((h - l1).abs() * gamma / (32.0 * std::f64::consts::LN_2));
        worst_slack = worst_slack.min(32.0 * std::f64::consts::LN_2 / gamma - (l1 - h));
    }
    checks.push(check(
        "log-cosh surrogate gap",
        worst_gap <= 1.0 + 1e-9 && worst_slack >= -1e-12,
        worst_gap,
        1.0,
        "|h_γ − ‖z‖₁| as a fraction of m·ln2/γ, γ ∈ {1, 10, 100, 10000}",
    ));

    // Task smoothness on a least-squares problem with known curvature.
    let (est, exact) = quadratic_smoothness(&mut r)?;
    let rel = (est - exact).abs() / exact;
    checks.push(check(
        "task smoothness estimate",
        rel <= 0.05,
        est,
        exact,
        "power iteration vs exact top eigenvalue of XᵀX/N",
    ));

    checks.extend(synthetic_run_checks(seed)?);

    let all_passed = checks.iter().all(|c| c.passed);
    Ok(CheckReport {
        seed,
        all_passed,
        checks,
    })
}

fn finite_difference_check(seed: u64, r: &mut StreamRng) -> Result<f64> {
    let fed = generate_synthetic(SyntheticTask::Logistic, 1, 40, 6, 0.0, seed)?;
    let data = &fed.data.dataset;
    let idx: Vec<usize> = (0..16).collect();
    let hp = HyperParams {
        lambda: 0.3,
        mu: 0.01,
        gamma: 10.0,
        ..HyperParams::default()
    };
    let mut worst: f64 = 0.0;
    for spec in [
        ModelSpec::logistic_regression(6, 2),
        ModelSpec::mlp(vec![6, 5, 2], Activation::Tanh),
    ] {
        let n = spec.num_params();
        let op = SketchOperator::new(seed, n, (n / 3).max(1))?;
        let problem = ClientProblem {
            spec: &spec,
            op: &op,
            hp: &hp,
            data,
        };
        let w: Vec<f64> = (0..n).map(|_| r.random_range(-0.5..0.5)).collect();
        let v = ConsensusVector::from_entries((0..op.sketch_dim()).map(|_| r.random_range(-1..=1)).collect())?;
        let g = problem.grad(&w, &v, &idx)?;
        let eps = 1e-4;
        for i in 0..n {
            let mut wp = w.clone();
            wp[i] += eps;
            let mut wm = w.clone();
            wm[i] -= eps;
            let fd = (problem.objective(&wp, &v, &idx)? - problem.objective(&wm, &v, &idx)?) / (2.0 * eps);
            let scale = fd.abs().max(g[i].abs()).max(1e-3);
            worst = worst.max((fd - g[i]).abs() / scale);
        }
    }
    Ok(worst)
}

fn quadratic_smoothness(r: &mut StreamRng) -> Result<(f64, f64)> {
    let dim = 5;
    let rows = 30;
    let features: Vec<f64> = (0..rows * dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let data = Dataset::new(dim, features, vec![0.0; rows])?;
    let spec = ModelSpec::linear_regression(dim);
    let idx: Vec<usize> = (0..rows).collect();
    let w = vec![0.0; spec.num_params()];
    let est = estimate_task_smoothness(&spec, &data, &idx, &w, 200, r)?;

    // Hessian of the mean of ½(wᵀx + b − y)² is the second moment of [x, 1].
    let d = dim + 1;
    let mut h = vec![0.0; d * d];
    for i in 0..rows {
        let mut x = data.row(i).to_vec();
        x.push(1.0);
        for a in 0..d {
            for b in 0..d {
                h[a * d + b] += x[a] * x[b] / rows as f64;
            }
        }
    }
    let mut v = vec![1.0; d];
    let mut exact = 0.0;
    for _ in 0..2000 {
        let hv: Vec<f64> = (0..d).map(|a| (0..d).map(|b| h[a * d + b] * v[b]).sum()).collect();
        exact = linalg::norm(&hv) / linalg::norm(&v);
        v = hv;
        let nv = linalg::norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
    }
    Ok((est, exact))
}

/// Descent, bounded-norm and convergence-bound checks on a small convex
/// federation.
fn synthetic_run_checks(seed: u64) -> Result<Vec<Check>> {
    let fed = generate_synthetic(SyntheticTask::Logistic, 10, 120, 10, 1.0, seed)?;
    let spec = ModelSpec::logistic_regression(10, 2);
    let hp = HyperParams {
        eta: 0.05,
        lambda: 0.0005,
        mu: 0.01,
        gamma: 100.0,
        local_steps: 5,
        rounds: 40,
        participants: 5,
        batch_size: 16,
    };
    let mut config = FederationConfig::new(Algorithm::Pfed1bs, spec.clone(), hp.clone());
    config.seed = seed;
    config.m_ratio = 0.25;
    config.potential = federation::PotentialMode::Exact;
    let out = federation::run(&config, &fed.data)?;
    let op = config.operator()?;
    let mut checks = Vec::new();

    let initial = out.initial.potential;
    let last = out.final_potential();
    checks.push(check(
        "potential decrease",
        last < initial,
        last,
        initial,
        "Ψ after 40 rounds vs Ψ⁰",
    ));

    let finite = out
        .metrics
        .iter()
        .all(|r| r.potential_estimate.is_finite() && r.grad_norm_sq.is_finite())
        && out.states.iter().all(|s| linalg::all_finite(&s.model));
    let mut r = rng::stream(seed, rng::EVAL + 2);
    let w0 = spec.init_params(seed);
    let mut probes: Vec<(&[f64], &[usize])> = out
        .states
        .iter()
        .map(|s| (s.model.as_slice(), s.train.as_slice()))
        .collect();
    probes.extend(out.states.iter().map(|s| (w0.as_slice(), s.train.as_slice())));
    let consts = estimate_gradient_constants(&spec, &fed.data.dataset, &probes, hp.batch_size, 50, &mut r)?;
    let ceiling = model_norm_bound(&hp, linalg::norm_sq(&w0), consts.second_moment, &op)
        .ok_or_else(|| Error::InvalidConfig("step size violates η < 1/(3μ)".into()))?;
    let peak = out.max_norm_sq.iter().copied().fold(0.0, f64::max);
    checks.push(check(
        "bounded model norm",
        finite && peak <= ceiling,
        peak,
        ceiling,
        "max ‖w_k‖² over rounds vs W² built from an estimated G²; a consistency check, not a proof",
    ));

    let task_l = out
        .states
        .iter()
        .map(|s| estimate_task_smoothness(&spec, &fed.data.dataset, &s.train, &s.model, 30, &mut r))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let l_f = smoothness_constant(task_l, &hp, &op);
    let max_norm = peak.sqrt();
    let inputs = TheoremInputs {
        initial_potential: initial,
        potential_lower_bound: potential_lower_bound(&hp, op.sketch_dim()),
        eta: hp.eta,
        local_steps: hp.local_steps,
        rounds: hp.rounds,
        smoothness: l_f,
        gradient_variance: consts.variance,
        delta_max: federation::delta_max(hp.lambda, op.sketch_dim(), op.norm_squared().sqrt(), max_norm),
        lambda: hp.lambda,
        sampling_error: out.sampling_error(),
    };
    let lhs = out.metrics.iter().map(|m| m.grad_norm_sq).sum::<f64>() / out.metrics.len() as f64;
    match theorem_rhs(&inputs) {
        Some(rhs) => checks.push(check(
            "convergence bound",
            lhs <= rhs,
            lhs,
            rhs,
            format!(
                "mean Σp_k‖∇F̃_k‖² at round ends vs the bound with L_F = {l_f:.4}, σ̂² = {:.4e}",
                consts.variance
            ),
        )),
        None => checks.push(check(
            "convergence bound",
            false,
            lhs,
            f64::NAN,
            format!("step size {} exceeds 2/L_F with L_F = {l_f:.4}", hp.eta),
        )),
    }
    Ok(checks)
}
