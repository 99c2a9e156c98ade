//! The round loop: broadcast, local updates, sampling, aggregation, and the
//! per-round metrics ledger. Also runs the FedAvg and local-only baselines
//! on the same partitions and budget.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use crate::client::{client_update, local_sgd, ClientState};
use crate::data::FederatedData;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ModelSpec;
use crate::objective::{ClientProblem, HyperParams};
use crate::rng::{self, StreamRng};
use crate::server;
use crate::sketch::{ConsensusVector, DownlinkMode, OneBitSketch, SketchOperator};

/// Size of the fixed per-client evaluation subset in sampled mode.
pub const POTENTIAL_SAMPLE: usize = 256;

/// Environment variable capping client-update parallelism.
pub const THREADS_ENV: &str = "ONEBIT_FL_THREADS";

/// Bits per parameter of an uncompressed model exchange.
pub const FULL_PRECISION_BITS: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Pfed1bs,
    FedAvg,
    /// Every client trains alone; nothing is communicated.
    Local,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pfed1bs" => Ok(Self::Pfed1bs),
            "fedavg" => Ok(Self::FedAvg),
            "local" => Ok(Self::Local),
            _ => Err(Error::InvalidConfig(format!(
                "unknown algorithm '{s}' (expected pfed1bs, fedavg or local)"
            ))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pfed1bs => "pfed1bs",
            Self::FedAvg => "fedavg",
            Self::Local => "local",
        })
    }
}

/// How the potential and training loss are evaluated each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialMode {
    /// Every client's full training partition.
    Exact,
    /// A fixed subset of at most [`POTENTIAL_SAMPLE`] training samples per
    /// client, drawn once per run.
    #[default]
    Sampled,
}

impl FromStr for PotentialMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(Self::Exact),
            "sampled" => Ok(Self::Sampled),
            _ => Err(Error::InvalidConfig(format!(
                "unknown potential mode '{s}' (expected exact or sampled)"
            ))),
        }
    }
}

impl fmt::Display for PotentialMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Sampled => "sampled",
        })
    }
}

/// What to do when a client's update fails numerically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorPolicy {
    /// Keep the client's previous state and leave it out of the vote.
    SkipClient,
    #[default]
    AbortRun,
}

impl FromStr for ErrorPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "skip-client" | "skip" => Ok(Self::SkipClient),
            "abort-run" | "abort" => Ok(Self::AbortRun),
            _ => Err(Error::InvalidConfig(format!(
                "unknown error policy '{s}' (expected skip-client or abort-run)"
            ))),
        }
    }
}

impl fmt::Display for ErrorPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SkipClient => "skip-client",
            Self::AbortRun => "abort-run",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub algorithm: Algorithm,
    pub spec: ModelSpec,
    pub hp: HyperParams,
    /// Sketch size as a fraction of the parameter count.
    pub m_ratio: f64,
    /// Master seed; also the shared sketch seed.
    pub seed: u64,
    pub downlink: DownlinkMode,
    /// Count the consensus broadcast once per round instead of once per
    /// receiving client.
    pub broadcast_once: bool,
    /// Every client trains each round, only the sampled ones are aggregated.
    pub train_all_clients: bool,
    pub potential: PotentialMode,
    pub error_policy: ErrorPolicy,
    /// Worker threads for client updates. `None` reads [`THREADS_ENV`],
    /// falling back to the rayon default.
    pub threads: Option<usize>,
}

impl FederationConfig {
    pub fn new(algorithm: Algorithm, spec: ModelSpec, hp: HyperParams) -> Self {
        Self {
            algorithm,
            spec,
            hp,
            m_ratio: 0.1,
            seed: 0,
            downlink: DownlinkMode::default(),
            broadcast_once: false,
            train_all_clients: false,
            potential: PotentialMode::default(),
            error_policy: ErrorPolicy::default(),
            threads: None,
        }
    }

    pub fn num_params(&self) -> usize {
        self.spec.num_params()
    }

    pub fn sketch_dim(&self) -> usize {
        sketch_dim(self.num_params(), self.m_ratio)
    }

    pub fn operator(&self) -> Result<SketchOperator> {
        SketchOperator::new(self.seed, self.num_params(), self.sketch_dim())
    }

    pub fn validate(&self, num_clients: usize) -> Result<()> {
        self.spec.validate()?;
        self.hp.validate()?;
        if !(self.m_ratio > 0.0 && self.m_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "m_ratio must be in (0, 1], got {}",
                self.m_ratio
            )));
        }
        if self.hp.participants > num_clients {
            return Err(Error::InvalidConfig(format!(
                "{} participants requested from {num_clients} clients",
                self.hp.participants
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be positive".into()));
        }
        Ok(())
    }
}

/// `m = round(m_ratio · n)`, at least 1.
pub fn sketch_dim(n: usize, m_ratio: f64) -> usize {
    ((m_ratio * n as f64).round() as usize).max(1)
}

/// One row of the metrics ledger, written after each round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    /// Rounds completed, starting at 1.
    pub round: usize,
    /// `Σ p_k f̂_k(w_k)` over the evaluation subsets.
    pub mean_train_loss: f64,
    /// Unweighted mean over all clients of top-1 accuracy on their own test
    /// partitions.
    pub mean_test_accuracy: f64,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    /// `Ψ = Σ p_k F̃_k(w_k; v)` at the end of the round.
    pub potential_estimate: f64,
    /// `2λ(√m·C_Φ·Ŵ + m)` with `Ŵ` the largest model norm seen so far.
    pub delta_max: f64,
    /// This round's summand of the sampling error average.
    pub sampling_error_term: f64,
    /// `Σ p_k ‖∇F̃_k(w_k; v)‖²` at the end of the round.
    pub grad_norm_sq: f64,
}

impl RoundMetrics {
    pub const CSV_HEADER: &'static str = "round,mean_train_loss,mean_test_accuracy,uplink_bits,downlink_bits,\
potential_estimate,delta_max,sampling_error_term,grad_norm_sq";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.round,
            self.mean_train_loss,
            self.mean_test_accuracy,
            self.uplink_bits,
            self.downlink_bits,
            self.potential_estimate,
            self.delta_max,
            self.sampling_error_term,
            self.grad_norm_sq
        )
    }
}

/// Federation-wide evaluation of one snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub mean_train_loss: f64,
    pub mean_test_accuracy: f64,
    pub potential: f64,
    pub grad_norm_sq: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub algorithm: Algorithm,
    pub metrics: Vec<RoundMetrics>,
    /// Evaluation before the first round; its potential is `Ψ⁰`.
    pub initial: Evaluation,
    pub states: Vec<ClientState>,
    /// Final server consensus.
    pub consensus: ConsensusVector,
    pub num_params: usize,
    pub sketch_dim: usize,
    /// Largest `‖w_k‖²` over clients after each round, index 0 being the
    /// initial models.
    pub max_norm_sq: Vec<f64>,
    /// Clients whose update failed and was skipped, as `(round, client)`.
    pub skipped: Vec<(usize, usize)>,
    pub wall_time_secs: f64,
}

impl RunOutput {
    pub fn total_uplink_bits(&self) -> u64 {
        self.metrics.iter().map(|r| r.uplink_bits).sum()
    }

    pub fn total_downlink_bits(&self) -> u64 {
        self.metrics.iter().map(|r| r.downlink_bits).sum()
    }

    /// Final mean test accuracy, or the initial one for a zero-round run.
    pub fn final_accuracy(&self) -> f64 {
        self.metrics
            .last()
            .map_or(self.initial.mean_test_accuracy, |r| r.mean_test_accuracy)
    }

    pub fn final_potential(&self) -> f64 {
        self.metrics
            .last()
            .map_or(self.initial.potential, |r| r.potential_estimate)
    }

    /// Mean over rounds of the sampling error summands.
    pub fn sampling_error(&self) -> f64 {
        if self.metrics.is_empty() {
            return 0.0;
        }
        self.metrics.iter().map(|r| r.sampling_error_term).sum::<f64>() / self.metrics.len() as f64
    }
}

/// Everything a round needs that does not change between rounds.
struct Context<'a> {
    config: &'a FederationConfig,
    data: &'a FederatedData,
    op: SketchOperator,
    eval_idx: Vec<Vec<usize>>,
}

impl<'a> Context<'a> {
    fn new(config: &'a FederationConfig, data: &'a FederatedData) -> Result<Self> {
        let op = config.operator()?;
        let eval_idx = evaluation_subsets(data, config.potential, config.seed);
        Ok(Self {
            config,
            data,
            op,
            eval_idx,
        })
    }

    fn problem(&self) -> ClientProblem<'_> {
        ClientProblem {
            spec: &self.config.spec,
            op: &self.op,
            hp: &self.config.hp,
            data: &self.data.dataset,
        }
    }

    fn evaluate(&self, states: &[ClientState], v: Option<&ConsensusVector>) -> Result<Evaluation> {
        let problem = self.problem();
        let spec = problem.spec;
        let data = problem.data;
        let per_client: Vec<(f64, f64, f64, f64)> = states
            .par_iter()
            .map(|s| {
                let idx = &self.eval_idx[s.id];
                let (loss, potential, grad) = match v {
                    Some(v) => {
                        let (loss, grad) = problem.loss_and_grad(&s.model, v, idx)?;
                        (loss, loss + problem.penalty(&s.model, v)?, grad)
                    }
                    None => {
                        let (loss, grad) = spec.loss_and_grad(&s.model, data, idx)?;
                        (loss, loss, grad)
                    }
                };
                let acc = if s.test.is_empty() {
                    0.0
                } else {
                    spec.accuracy(&s.model, data, &s.test)?
                };
                Ok((loss, potential, linalg::norm_sq(&grad), acc))
            })
            .collect::<Result<_>>()?;
        let mut eval = Evaluation {
            mean_train_loss: 0.0,
            mean_test_accuracy: 0.0,
            potential: 0.0,
            grad_norm_sq: 0.0,
        };
        for (s, &(loss, potential, grad_sq, acc)) in states.iter().zip(&per_client) {
            eval.mean_train_loss += s.weight * loss;
            eval.potential += s.weight * potential;
            eval.grad_norm_sq += s.weight * grad_sq;
            eval.mean_test_accuracy += acc;
        }
        eval.mean_test_accuracy /= states.len() as f64;
        if !eval.potential.is_finite() || !eval.grad_norm_sq.is_finite() {
            return Err(Error::numeric("round evaluation"));
        }
        Ok(eval)
    }
}

fn evaluation_subsets(data: &FederatedData, mode: PotentialMode, seed: u64) -> Vec<Vec<usize>> {
    let mut r = rng::stream(seed, rng::EVAL);
    data.clients
        .iter()
        .map(|c| match mode {
            PotentialMode::Exact => c.train.clone(),
            PotentialMode::Sampled if c.train.len() <= POTENTIAL_SAMPLE => c.train.clone(),
            PotentialMode::Sampled => {
                let mut picked: Vec<usize> = index::sample(&mut r, c.train.len(), POTENTIAL_SAMPLE)
                    .into_iter()
                    .map(|i| c.train[i])
                    .collect();
                picked.sort_unstable();
                picked
            }
        })
        .collect()
}

/// Initial client states: every client starts from the same model.
pub fn initial_states(config: &FederationConfig, data: &FederatedData) -> Vec<ClientState> {
    let w0 = config.spec.init_params(config.seed);
    let weights = data.weights();
    data.clients
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(k, (part, p))| ClientState::new(k, w0.clone(), p, part.clone(), config.seed))
        .collect()
}

fn thread_count(config: &FederationConfig) -> Option<usize> {
    config.threads.or_else(|| {
        let raw = std::env::var(THREADS_ENV).ok()?;
        match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => {
                warn!("ignoring {THREADS_ENV}={raw}");
                None
            }
        }
    })
}

/// Runs `hp.rounds` rounds of the configured algorithm.
pub fn run(config: &FederationConfig, data: &FederatedData) -> Result<RunOutput> {
    config.validate(data.num_clients())?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(config) {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| run_in_pool(config, data))
}

fn run_in_pool(config: &FederationConfig, data: &FederatedData) -> Result<RunOutput> {
    let start = Instant::now();
    let ctx = Context::new(config, data)?;
    let mut out = match config.algorithm {
        Algorithm::Pfed1bs => run_pfed1bs(&ctx)?,
        Algorithm::FedAvg => run_fedavg(&ctx)?,
        Algorithm::Local => run_local(&ctx)?,
    };
    out.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(out)
}

fn max_norm_sq(states: &[ClientState]) -> f64 {
    states.iter().map(|s| linalg::norm_sq(&s.model)).fold(0.0, f64::max)
}

/// `2√m · sqrt((K−S)/(S·K·(K−1)) · Σ_k ‖z_k − z̄‖²)` for one round's
/// sketches, `z̄` being their unweighted mean.
pub fn sampling_error_summand(sketches: &[OneBitSketch], participants: usize) -> f64 {
    let k = sketches.len();
    if k <= 1 || participants >= k {
        return 0.0;
    }
    let m = sketches[0].len();
    let z: Vec<Vec<f64>> = sketches.iter().map(|s| s.to_f64()).collect();
    let mut mean = vec![0.0; m];
    for zk in &z {
        linalg::axpy(1.0 / k as f64, zk, &mut mean);
    }
    let spread: f64 = z
        .iter()
        .map(|zk| {
            let d: f64 = zk.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!(d <= 4.0 * m as f64 + 1e-9, "sketch spread {d} exceeds 4m");
            d
        })
        .sum();
    let s = participants as f64;
    let kf = k as f64;
    let variance = (kf - s) / (s * kf * (kf - 1.0)) * spread;
    2.0 * (m as f64).sqrt() * variance.sqrt()
}

/// `2λ(√m·C_Φ·W + m)`.
pub fn delta_max(lambda: f64, m: usize, norm_constant: f64, max_norm: f64) -> f64 {
    let m = m as f64;
    2.0 * lambda * (m.sqrt() * norm_constant * max_norm + m)
}

fn run_pfed1bs(ctx: &Context<'_>) -> Result<RunOutput> {
    let config = ctx.config;
    let hp = &config.hp;
    let op = &ctx.op;
    let m = op.sketch_dim();
    let k_total = ctx.data.num_clients();
    let mut states = initial_states(config, ctx.data);
    let mut v = ConsensusVector::zeros(m);
    let mut server_rng = rng::stream(config.seed, rng::SERVER);
    let mut sketches: Vec<OneBitSketch> = states.iter().map(|s| op.sketch(&s.model)).collect::<Result<_>>()?;

    let initial = ctx.evaluate(&states, Some(&v.as_received(config.downlink)))?;
    let mut norm_history = vec![max_norm_sq(&states)];
    let mut running_norm = norm_history[0].sqrt();
    let mut metrics = Vec::with_capacity(hp.rounds);
    let mut skipped = Vec::new();

    for t in 0..hp.rounds {
        let received = v.as_received(config.downlink);
        let sampled = server::sample_clients(k_total, hp.participants, &mut server_rng)?;
        let trainers: Vec<usize> = if config.train_all_clients {
            (0..k_total).collect()
        } else {
            sampled.clone()
        };

        let results: Vec<Result<(OneBitSketch, ClientState)>> = trainers
            .par_iter()
            .map(|&k| client_update(&states[k], &received, op, &config.spec, hp, &ctx.data.dataset))
            .collect();
        let mut failed = vec![false; k_total];
        for (&k, result) in trainers.iter().zip(results) {
            match result {
                Ok((sketch, state)) => {
                    sketches[k] = sketch;
                    states[k] = state;
                }
                Err(e) if e.is_numeric() && config.error_policy == ErrorPolicy::SkipClient => {
                    warn!("round {}: skipping client {k}: {e}", t + 1);
                    failed[k] = true;
                    skipped.push((t + 1, k));
                }
                Err(e) => return Err(e),
            }
        }

        let voters: Vec<usize> = sampled.iter().copied().filter(|&k| !failed[k]).collect();
        if !voters.is_empty() {
            let votes: Vec<(&OneBitSketch, f64)> = voters.iter().map(|&k| (&sketches[k], states[k].weight)).collect();
            let next = server::aggregate(&votes)?;
            check_server_step(&votes, &v, &next);
            v = next;
        }

        let uplink_bits = voters.len() as u64 * m as u64;
        if voters.len() == sampled.len() {
            assert_eq!(uplink_bits, (hp.participants * m) as u64);
        }
        let receivers = if config.broadcast_once {
            1
        } else {
            trainers.len() as u64
        };
        let downlink_bits = receivers * received.payload_bits(config.downlink);

        let round_norm = max_norm_sq(&states);
        norm_history.push(round_norm);
        running_norm = running_norm.max(round_norm.sqrt());
        let eval = ctx.evaluate(&states, Some(&v.as_received(config.downlink)))?;
        metrics.push(RoundMetrics {
            round: t + 1,
            mean_train_loss: eval.mean_train_loss,
            mean_test_accuracy: eval.mean_test_accuracy,
            uplink_bits,
            downlink_bits,
            potential_estimate: eval.potential,
            delta_max: delta_max(hp.lambda, m, op.norm_squared().sqrt(), running_norm),
            sampling_error_term: sampling_error_summand(&sketches, hp.participants),
            grad_norm_sq: eval.grad_norm_sq,
        });
    }

    Ok(RunOutput {
        algorithm: Algorithm::Pfed1bs,
        metrics,
        initial,
        states,
        consensus: v,
        num_params: op.input_dim(),
        sketch_dim: m,
        max_norm_sq: norm_history,
        skipped,
        wall_time_secs: 0.0,
    })
}

/// The aggregated vote never decreases `⟨v, Σ p_k z_k⟩` relative to the
/// previous consensus.
fn check_server_step(votes: &[(&OneBitSketch, f64)], old: &ConsensusVector, new: &ConsensusVector) {
    let m = old.len();
    let mut zhat = vec![0.0; m];
    let mut total = 0.0;
    for (s, p) in votes {
        linalg::axpy(*p, &s.to_f64(), &mut zhat);
        total += p;
    }
    let before = linalg::dot(&old.to_f64(), &zhat);
    let after = linalg::dot(&new.to_f64(), &zhat);
    assert!(
        after >= before - 1e-9 * total * m as f64,
        "server step increased the objective: {after} < {before}"
    );
}

fn run_fedavg(ctx: &Context<'_>) -> Result<RunOutput> {
    let config = ctx.config;
    let hp = &config.hp;
    let spec = &config.spec;
    let data = &ctx.data.dataset;
    let n = spec.num_params();
    let k_total = ctx.data.num_clients();
    let mut states = initial_states(config, ctx.data);
    let mut global = states[0].model.clone();
    let mut server_rng = rng::stream(config.seed, rng::SERVER);
    let initial = ctx.evaluate(&states, None)?;
    let mut norm_history = vec![max_norm_sq(&states)];
    let mut metrics = Vec::with_capacity(hp.rounds);
    let mut skipped = Vec::new();
    let model_bits = n as u64 * FULL_PRECISION_BITS;

    for t in 0..hp.rounds {
        let sampled = server::sample_clients(k_total, hp.participants, &mut server_rng)?;
        let results: Vec<Result<(Vec<f64>, StreamRng)>> = sampled
            .par_iter()
            .map(|&k| {
                let mut r = states[k].rng.clone();
                let w = local_sgd(
                    &global,
                    &states[k].train,
                    &mut r,
                    hp.local_steps,
                    hp.eta,
                    hp.batch_size,
                    |w, b| Ok(spec.loss_and_grad(w, data, b)?.1),
                )
                .map_err(|e| Error::Client {
                    client: k,
                    source: Box::new(e),
                })?;
                Ok((w, r))
            })
            .collect();
        let mut sum = vec![0.0; n];
        let mut mass = 0.0;
        let mut uploads = 0u64;
        for (&k, result) in sampled.iter().zip(results) {
            match result {
                Ok((w, r)) => {
                    states[k].rng = r;
                    linalg::axpy(states[k].weight, &w, &mut sum);
                    mass += states[k].weight;
                    uploads += 1;
                }
                Err(e) if e.is_numeric() && config.error_policy == ErrorPolicy::SkipClient => {
                    warn!("round {}: skipping client {k}: {e}", t + 1);
                    skipped.push((t + 1, k));
                }
                Err(e) => return Err(e),
            }
        }
        if mass > 0.0 {
            global = sum.into_iter().map(|x| x / mass).collect();
            for s in &mut states {
                s.model.clone_from(&global);
            }
        }
        let uplink_bits = uploads * model_bits;
        let downlink_bits = if config.broadcast_once {
            model_bits
        } else {
            sampled.len() as u64 * model_bits
        };
        if uploads as usize == hp.participants {
            assert_eq!(uplink_bits, (hp.participants * n) as u64 * FULL_PRECISION_BITS);
        }
        norm_history.push(max_norm_sq(&states));
        let eval = ctx.evaluate(&states, None)?;
        metrics.push(baseline_row(t, eval, uplink_bits, downlink_bits));
    }

    Ok(RunOutput {
        algorithm: Algorithm::FedAvg,
        metrics,
        initial,
        states,
        consensus: ConsensusVector::zeros(ctx.op.sketch_dim()),
        num_params: n,
        sketch_dim: ctx.op.sketch_dim(),
        max_norm_sq: norm_history,
        skipped,
        wall_time_secs: 0.0,
    })
}

fn run_local(ctx: &Context<'_>) -> Result<RunOutput> {
    let config = ctx.config;
    let hp = &config.hp;
    let spec = &config.spec;
    let data = &ctx.data.dataset;
    let mut states = initial_states(config, ctx.data);
    let initial = ctx.evaluate(&states, None)?;
    let mut norm_history = vec![max_norm_sq(&states)];
    let mut metrics = Vec::with_capacity(hp.rounds);
    let mut skipped = Vec::new();

    for t in 0..hp.rounds {
        let results: Vec<Result<ClientState>> = states
            .par_iter()
            .map(|s| {
                let mut next = s.clone();
                next.model = local_sgd(
                    &s.model,
                    &s.train,
                    &mut next.rng,
                    hp.local_steps,
                    hp.eta,
                    hp.batch_size,
                    |w, b| Ok(spec.loss_and_grad(w, data, b)?.1),
                )
                .map_err(|e| Error::Client {
                    client: s.id,
                    source: Box::new(e),
                })?;
                Ok(next)
            })
            .collect();
        for (k, result) in results.into_iter().enumerate() {
            match result {
                Ok(next) => states[k] = next,
                Err(e) if e.is_numeric() && config.error_policy == ErrorPolicy::SkipClient => {
                    warn!("round {}: skipping client {k}: {e}", t + 1);
                    skipped.push((t + 1, k));
                }
                Err(e) => return Err(e),
            }
        }
        norm_history.push(max_norm_sq(&states));
        let eval = ctx.evaluate(&states, None)?;
        metrics.push(baseline_row(t, eval, 0, 0));
    }

    Ok(RunOutput {
        algorithm: Algorithm::Local,
        metrics,
        initial,
        states,
        consensus: ConsensusVector::zeros(ctx.op.sketch_dim()),
        num_params: spec.num_params(),
        sketch_dim: ctx.op.sketch_dim(),
        max_norm_sq: norm_history,
        skipped,
        wall_time_secs: 0.0,
    })
}

/// Baselines have no consensus, so their potential is the plain weighted
/// task loss and the sketch error terms are zero.
fn baseline_row(t: usize, eval: Evaluation, uplink_bits: u64, downlink_bits: u64) -> RoundMetrics {
    RoundMetrics {
        round: t + 1,
        mean_train_loss: eval.mean_train_loss,
        mean_test_accuracy: eval.mean_test_accuracy,
        uplink_bits,
        downlink_bits,
        potential_estimate: eval.potential,
        delta_max: 0.0,
        sampling_error_term: 0.0,
        grad_norm_sq: eval.grad_norm_sq,
    }
}

/// A potential value with the standard error of its estimator (zero for
/// exact evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PotentialEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// `Ψ = Σ p_k F̃_k(w_k; v)`.
///
/// Exact mode averages each client's loss over its whole training partition.
/// Sampled mode uses the same fixed subsets as the round metrics and reports
/// the finite-population standard error
/// `sqrt(Σ p_k² s_k²/n_k · (1 − n_k/N_k))`, where `s_k²` is the per-sample
/// loss variance over the `n_k` of `N_k` samples used.
pub fn potential_value(
    config: &FederationConfig,
    data: &FederatedData,
    states: &[ClientState],
    v: &ConsensusVector,
    mode: PotentialMode,
) -> Result<PotentialEstimate> {
    let op = config.operator()?;
    let eval_idx = evaluation_subsets(data, mode, config.seed);
    let problem = ClientProblem {
        spec: &config.spec,
        op: &op,
        hp: &config.hp,
        data: &data.dataset,
    };
    let mut value = 0.0;
    let mut var = 0.0;
    for s in states {
        let idx = &eval_idx[s.id];
        let losses: Vec<f64> = idx
            .iter()
            .map(|&i| config.spec.loss(&s.model, &data.dataset, &[i]))
            .collect::<Result<_>>()?;
        let n = losses.len() as f64;
        let mean = losses.iter().sum::<f64>() / n;
        value += s.weight * (mean + problem.penalty(&s.model, v)?);
        let population = s.train.len() as f64;
        if n > 1.0 && n < population {
            let s2 = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / (n - 1.0);
            var += s.weight * s.weight * s2 / n * (1.0 - n / population);
        }
    }
    Ok(PotentialEstimate {
        value,
        std_error: var.sqrt(),
    })
}

pub fn write_metrics_csv<W: Write>(mut out: W, metrics: &[RoundMetrics]) -> Result<()> {
    writeln!(out, "{}", RoundMetrics::CSV_HEADER)?;
    for row in metrics {
        writeln!(out, "{}", row.csv_row())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub rounds: usize,
    pub num_params: usize,
    pub sketch_dim: usize,
    pub initial_potential: f64,
    pub final_potential: f64,
    pub final_accuracy: f64,
    pub total_uplink_bits: u64,
    pub total_downlink_bits: u64,
    pub sampling_error: f64,
    pub skipped_clients: Vec<(usize, usize)>,
    pub wall_time_secs: f64,
    /// Canonical `key = value` lines of the configuration that produced
    /// the run.
    pub config: Vec<String>,
    pub git_describe: String,
}

impl RunSummary {
    pub fn new(out: &RunOutput, config_echo: &str) -> Self {
        Self {
            algorithm: out.algorithm,
            rounds: out.metrics.len(),
            num_params: out.num_params,
            sketch_dim: out.sketch_dim,
            initial_potential: out.initial.potential,
            final_potential: out.final_potential(),
            final_accuracy: out.final_accuracy(),
            total_uplink_bits: out.total_uplink_bits(),
            total_downlink_bits: out.total_downlink_bits(),
            sampling_error: out.sampling_error(),
            skipped_clients: out.skipped.clone(),
            wall_time_secs: out.wall_time_secs,
            config: config_echo.lines().map(str::to_string).collect(),
            git_describe: git_describe(),
        }
    }
}

/// `git describe --always --dirty` of the working directory, or "unknown".
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

/// Writes `metrics.csv` and `summary.json` into `dir`.
pub fn write_run(dir: &Path, out: &RunOutput, config_echo: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let csv = std::fs::File::create(dir.join("metrics.csv"))?;
    write_metrics_csv(std::io::BufWriter::new(csv), &out.metrics)?;
    let summary = RunSummary::new(out, config_echo);
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    std::fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}

/// `1 − m / (n · bits)`: the fraction of uplink traffic saved by sending an
/// `m`-bit sketch instead of `n` parameters at `bits` bits each.
pub fn comm_cost_reduction(model_bits_per_param: u64, n: usize, m: usize) -> f64 {
    1.0 - m as f64 / (n as f64 * model_bits_per_param as f64)
}

const MIB: f64 = (1u64 << 20) as f64;

/// Per-round traffic of one-bit sketching against full-precision model
/// exchange, broken down by direction and accounting convention.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostLedger {
    pub num_params: usize,
    pub sketch_dim: usize,
    pub clients: usize,
    pub participants: usize,
    pub model_bits_per_param: u64,
    pub downlink: DownlinkMode,
    pub uplink_reduction: f64,
    pub rows: Vec<CostRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub scope: String,
    pub sketch_bits: u64,
    pub full_bits: u64,
}

impl CostRow {
    pub fn sketch_mib(&self) -> f64 {
        self.sketch_bits as f64 / 8.0 / MIB
    }

    pub fn full_mib(&self) -> f64 {
        self.full_bits as f64 / 8.0 / MIB
    }

    pub fn reduction(&self) -> f64 {
        1.0 - self.sketch_bits as f64 / self.full_bits as f64
    }
}

impl CostLedger {
    pub fn new(n: usize, m: usize, clients: usize, participants: usize, downlink: DownlinkMode) -> Self {
        let bits = FULL_PRECISION_BITS;
        let full = n as u64 * bits;
        let up = m as u64;
        let down = m as u64 * downlink.bits_per_entry();
        let row = |scope: &str, sketch_bits: u64, full_bits: u64| CostRow {
            scope: scope.to_string(),
            sketch_bits,
            full_bits,
        };
        let s = participants as u64;
        let k = clients as u64;
        let rows = vec![
            row("uplink, one client", up, full),
            row("downlink, one client", down, full),
            row("uplink, S participants", s * up, s * full),
            row("round, S participants, unicast", s * (up + down), 2 * s * full),
            row("round, S participants, broadcast once", s * up + down, s * full + full),
            row("round, all K clients, unicast", k * (up + down), 2 * k * full),
        ];
        Self {
            num_params: n,
            sketch_dim: m,
            clients,
            participants,
            model_bits_per_param: bits,
            downlink,
            uplink_reduction: comm_cost_reduction(bits, n, m),
            rows,
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "model parameters n = {}, sketch size m = {}, clients K = {}, participants S = {}, downlink {} bit(s) per entry\n",
            self.num_params,
            self.sketch_dim,
            self.clients,
            self.participants,
            self.downlink.bits_per_entry()
        );
        s += &format!(
            "{:<40} {:>14} {:>14} {:>12} {:>12} {:>10}\n",
            "scope", "sketch bits", "fp32 bits", "sketch MiB", "fp32 MiB", "saved"
        );
        for r in &self.rows {
            s += &format!(
                "{:<40} {:>14} {:>14} {:>12.4} {:>12.4} {:>9.4}%\n",
                r.scope,
                r.sketch_bits,
                r.full_bits,
                r.sketch_mib(),
                r.full_mib(),
                100.0 * r.reduction()
            );
        }
        s += &format!(
            "uplink reduction for n = {}, m = {}: {:.2}% ({:.4}%)\n",
            self.num_params,
            self.sketch_dim,
            100.0 * self.uplink_reduction,
            100.0 * self.uplink_reduction
        );
        s
    }
}
