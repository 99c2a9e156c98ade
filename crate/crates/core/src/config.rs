//! Experiment configuration: a flat `key = value` file, defaults, command
//! line overrides, and a canonical echo that reproduces a run.
//!
//! ```text
//! # comments and blank lines are ignored
//! algorithm = pfed1bs
//! dataset = synthetic-logistic
//! K = 20
//! S = 10
//! flags = train_all_clients, broadcast_once
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{self, FederatedData, SyntheticTask, TEST_FRACTION};
use crate::error::{Error, Result};
use crate::federation::{Algorithm, ErrorPolicy, FederationConfig, PotentialMode};
use crate::model::{Activation, ModelSpec};
use crate::objective::HyperParams;
use crate::sketch::DownlinkMode;

/// Every key the configuration file accepts.
pub const KEYS: &[&str] = &[
    "K",
    "R",
    "S",
    "T",
    "activation",
    "algorithm",
    "batch_size",
    "data_path",
    "dataset",
    "dim",
    "error_policy",
    "eta",
    "flags",
    "gamma",
    "heterogeneity",
    "hidden",
    "lambda",
    "m_ratio",
    "model",
    "mu",
    "output_dir",
    "potential",
    "samples_per_client",
    "seed",
    "shards_per_client",
];

/// Names accepted in the `flags` list.
pub const FLAGS: &[&str] = &["broadcast_once", "strict_onebit_downlink", "train_all_clients"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    SyntheticLogistic,
    SyntheticLinear,
    /// MNIST IDX files in `data_path`, label-skew partitioned.
    Mnist,
    /// A label-first CSV at `data_path`, label-skew partitioned.
    Csv,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic-logistic" => Ok(Self::SyntheticLogistic),
            "synthetic-linear" => Ok(Self::SyntheticLinear),
            "mnist" => Ok(Self::Mnist),
            "csv" => Ok(Self::Csv),
            _ => Err(Error::InvalidConfig(format!(
                "unknown dataset '{s}' (expected synthetic-logistic, synthetic-linear, mnist or csv)"
            ))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SyntheticLogistic => "synthetic-logistic",
            Self::SyntheticLinear => "synthetic-linear",
            Self::Mnist => "mnist",
            Self::Csv => "csv",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKindChoice {
    Linear,
    Logistic,
    Mlp,
}

impl FromStr for ModelKindChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "logistic" => Ok(Self::Logistic),
            "mlp" => Ok(Self::Mlp),
            _ => Err(Error::InvalidConfig(format!(
                "unknown model '{s}' (expected linear, logistic or mlp)"
            ))),
        }
    }
}

impl fmt::Display for ModelKindChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Logistic => "logistic",
            Self::Mlp => "mlp",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub model: ModelKindChoice,
    pub activation: Activation,
    /// Hidden width of the MLP.
    pub hidden: usize,
    pub dataset: DatasetKind,
    pub data_path: PathBuf,
    /// Number of clients K.
    pub clients: usize,
    pub hp: HyperParams,
    pub m_ratio: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub train_all_clients: bool,
    pub strict_onebit_downlink: bool,
    pub broadcast_once: bool,
    pub potential: PotentialMode,
    pub error_policy: ErrorPolicy,
    /// Feature dimension of synthetic data.
    pub dim: usize,
    pub samples_per_client: usize,
    pub heterogeneity: f64,
    pub shards_per_client: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Pfed1bs,
            model: ModelKindChoice::Logistic,
            activation: Activation::Tanh,
            hidden: 256,
            dataset: DatasetKind::SyntheticLogistic,
            data_path: PathBuf::from("data/mnist"),
            clients: 20,
            hp: HyperParams::default(),
            m_ratio: 0.1,
            seed: 0,
            output_dir: PathBuf::from("runs/latest"),
            train_all_clients: false,
            strict_onebit_downlink: false,
            broadcast_once: false,
            potential: PotentialMode::Sampled,
            error_policy: ErrorPolicy::AbortRun,
            dim: 50,
            samples_per_client: 500,
            heterogeneity: 1.0,
            shards_per_client: 2,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("invalid value '{value}' for {key}")))
}

impl ExperimentConfig {
    /// Parses configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), lineno + 1).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "line {}: duplicate key '{key}'",
                    lineno + 1
                )));
            }
            config
                .set(key, value)
                .map_err(|e| Error::InvalidConfig(format!("line {}: {}", lineno + 1, strip_prefix(&e))))?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "algorithm" => self.algorithm = value.parse()?,
            "model" => self.model = value.parse()?,
            "activation" => {
                self.activation = match value {
                    "tanh" => Activation::Tanh,
                    "relu" => Activation::Relu,
                    _ => return Err(Error::InvalidConfig(format!("unknown activation '{value}'"))),
                }
            }
            "hidden" => self.hidden = parse_value(key, value)?,
            "dataset" => self.dataset = value.parse()?,
            "data_path" => self.data_path = PathBuf::from(value),
            "K" => self.clients = parse_value(key, value)?,
            "S" => self.hp.participants = parse_value(key, value)?,
            "T" => self.hp.rounds = parse_value(key, value)?,
            "R" => self.hp.local_steps = parse_value(key, value)?,
            "eta" => self.hp.eta = parse_value(key, value)?,
            "lambda" => self.hp.lambda = parse_value(key, value)?,
            "mu" => self.hp.mu = parse_value(key, value)?,
            "gamma" => self.hp.gamma = parse_value(key, value)?,
            "batch_size" => self.hp.batch_size = parse_value(key, value)?,
            "m_ratio" => self.m_ratio = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "potential" => self.potential = value.parse()?,
            "error_policy" => self.error_policy = value.parse()?,
            "dim" => self.dim = parse_value(key, value)?,
            "samples_per_client" => self.samples_per_client = parse_value(key, value)?,
            "heterogeneity" => self.heterogeneity = parse_value(key, value)?,
            "shards_per_client" => self.shards_per_client = parse_value(key, value)?,
            "flags" => {
                self.train_all_clients = false;
                self.strict_onebit_downlink = false;
                self.broadcast_once = false;
                for flag in value.split(',').map(str::trim).filter(|f| !f.is_empty()) {
                    match flag {
                        "train_all_clients" => self.train_all_clients = true,
                        "strict_onebit_downlink" => self.strict_onebit_downlink = true,
                        "broadcast_once" => self.broadcast_once = true,
                        _ => {
                            return Err(Error::InvalidConfig(format!(
                                "unknown flag '{flag}'; valid flags: {}",
                                FLAGS.join(", ")
                            )))
                        }
                    }
                }
            }
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unknown key '{key}'; valid keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        self.hp.validate()?;
        if self.clients == 0 {
            return bad("K must be positive".into());
        }
        if self.hp.participants > self.clients {
            return bad(format!("S = {} exceeds K = {}", self.hp.participants, self.clients));
        }
        if !(self.m_ratio > 0.0 && self.m_ratio <= 1.0) {
            return bad(format!("m_ratio must be in (0, 1], got {}", self.m_ratio));
        }
        let classification = self.dataset != DatasetKind::SyntheticLinear;
        if classification == (self.model == ModelKindChoice::Linear) {
            return bad(format!("model {} does not fit dataset {}", self.model, self.dataset));
        }
        if self.model == ModelKindChoice::Mlp && self.hidden == 0 {
            return bad("hidden must be positive".into());
        }
        match self.dataset {
            DatasetKind::SyntheticLinear | DatasetKind::SyntheticLogistic => {
                if self.dim == 0 || self.samples_per_client < 2 {
                    return bad("synthetic data needs dim ≥ 1 and samples_per_client ≥ 2".into());
                }
                if !(self.heterogeneity >= 0.0 && self.heterogeneity.is_finite()) {
                    return bad("heterogeneity must be non-negative".into());
                }
                let held_out = ((TEST_FRACTION * self.samples_per_client as f64).round() as usize).max(1);
                let train = self.samples_per_client - held_out;
                if self.hp.batch_size > train {
                    return bad(format!(
                        "batch_size {} exceeds the {train} training samples per client",
                        self.hp.batch_size
                    ));
                }
            }
            DatasetKind::Mnist | DatasetKind::Csv => {
                if self.shards_per_client == 0 {
                    return bad("shards_per_client must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// Canonical `key = value` lines, sorted by key, covering every key.
    pub fn echo(&self) -> String {
        let mut flags = Vec::new();
        if self.broadcast_once {
            flags.push("broadcast_once");
        }
        if self.strict_onebit_downlink {
            flags.push("strict_onebit_downlink");
        }
        if self.train_all_clients {
            flags.push("train_all_clients");
        }
        let activation = match self.activation {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        };
        let hp = &self.hp;
        let entries: BTreeMap<&str, String> = [
            ("K", self.clients.to_string()),
            ("R", hp.local_steps.to_string()),
            ("S", hp.participants.to_string()),
            ("T", hp.rounds.to_string()),
            ("activation", activation.to_string()),
            ("algorithm", self.algorithm.to_string()),
            ("batch_size", hp.batch_size.to_string()),
            ("data_path", self.data_path.display().to_string()),
            ("dataset", self.dataset.to_string()),
            ("dim", self.dim.to_string()),
            ("error_policy", self.error_policy.to_string()),
            ("eta", hp.eta.to_string()),
            ("flags", flags.join(", ")),
            ("gamma", hp.gamma.to_string()),
            ("heterogeneity", self.heterogeneity.to_string()),
            ("hidden", self.hidden.to_string()),
            ("lambda", hp.lambda.to_string()),
            ("m_ratio", self.m_ratio.to_string()),
            ("model", self.model.to_string()),
            ("mu", hp.mu.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            ("potential", self.potential.to_string()),
            ("samples_per_client", self.samples_per_client.to_string()),
            ("seed", self.seed.to_string()),
            ("shards_per_client", self.shards_per_client.to_string()),
        ]
        .into_iter()
        .collect();
        debug_assert_eq!(entries.len(), KEYS.len());
        entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Loads or generates the federated data.
    pub fn load_data(&self) -> Result<FederatedData> {
        self.validate()?;
        let data = match self.dataset {
            DatasetKind::SyntheticLogistic | DatasetKind::SyntheticLinear => {
                let task = if self.dataset == DatasetKind::SyntheticLogistic {
                    SyntheticTask::Logistic
                } else {
                    SyntheticTask::Linear
                };
                data::generate_synthetic(
                    task,
                    self.clients,
                    self.samples_per_client,
                    self.dim,
                    self.heterogeneity,
                    self.seed,
                )?
                .data
            }
            DatasetKind::Mnist => {
                let dataset = data::load_dataset(&data::mnist_source(&self.data_path, true))?;
                data::federate_by_label(dataset, self.clients, self.shards_per_client, self.seed)?
            }
            DatasetKind::Csv => {
                let mut dataset = data::load_csv(&self.data_path)?;
                dataset.scale_to_unit();
                data::federate_by_label(dataset, self.clients, self.shards_per_client, self.seed)?
            }
        };
        let smallest = data.clients.iter().map(|c| c.train.len()).min().unwrap_or(0);
        if self.hp.batch_size > smallest {
            return Err(Error::InvalidConfig(format!(
                "batch_size {} exceeds the smallest training partition ({smallest} samples)",
                self.hp.batch_size
            )));
        }
        Ok(data)
    }

    /// The model matching the data's shape.
    pub fn model_spec(&self, data: &FederatedData) -> ModelSpec {
        let dim = data.dataset.dim();
        let classes = data.dataset.num_classes().max(2);
        match self.model {
            ModelKindChoice::Linear => ModelSpec::linear_regression(dim),
            ModelKindChoice::Logistic => ModelSpec::logistic_regression(dim, classes),
            ModelKindChoice::Mlp => ModelSpec::mlp(vec![dim, self.hidden, classes], self.activation),
        }
    }

    /// The model this configuration would build, without loading data.
    /// Real datasets are assumed to be MNIST-shaped (784 inputs, 10 classes).
    pub fn nominal_model_spec(&self) -> ModelSpec {
        let (dim, classes) = match self.dataset {
            DatasetKind::SyntheticLogistic | DatasetKind::SyntheticLinear => (self.dim, 2),
            DatasetKind::Mnist | DatasetKind::Csv => (784, 10),
        };
        match self.model {
            ModelKindChoice::Linear => ModelSpec::linear_regression(dim),
            ModelKindChoice::Logistic => ModelSpec::logistic_regression(dim, classes),
            ModelKindChoice::Mlp => ModelSpec::mlp(vec![dim, self.hidden, classes], self.activation),
        }
    }

    pub fn federation(&self, spec: ModelSpec) -> FederationConfig {
        let mut f = FederationConfig::new(self.algorithm, spec, self.hp.clone());
        f.m_ratio = self.m_ratio;
        f.seed = self.seed;
        f.downlink = if self.strict_onebit_downlink {
            DownlinkMode::StrictOneBit
        } else {
            DownlinkMode::Ternary
        };
        f.broadcast_once = self.broadcast_once;
        f.train_all_clients = self.train_all_clients;
        f.potential = self.potential;
        f.error_policy = self.error_policy;
        f
    }

    /// Data and federation settings, fully validated.
    pub fn build(&self) -> Result<(FederatedData, FederationConfig)> {
        let data = self.load_data()?;
        let federation = self.federation(self.model_spec(&data));
        federation.validate(data.num_clients())?;
        Ok((data, federation))
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::InvalidConfig(msg) => msg.clone(),
        other => other.to_string(),
    }
}
