//! Command line front end: `run`, `check`, `cost` and `bench`.
//!
//! Exit codes: 0 on success, 1 on invalid configuration or arguments (and
//! on a failed self-check), 2 on a numeric failure during a run.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::client::{client_update, ClientState};
use crate::config::ExperimentConfig;
use crate::data::{generate_synthetic, SyntheticTask};
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::federation::{self, Algorithm, CostLedger, PotentialMode};
use crate::model::ModelSpec;
use crate::objective::HyperParams;
use crate::sketch::{fwht_in_place, ConsensusVector, DownlinkMode, SketchOperator};

#[derive(Debug, Parser)]
#[command(
    name = "onebit-fl",
    version,
    about = "Personalized federated learning with one-bit sketches"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// pfed1bs, fedavg or local.
    #[arg(long, global = true)]
    pub algo: Option<Algorithm>,

    /// Communication rounds T.
    #[arg(long, global = true)]
    pub rounds: Option<usize>,

    /// Number of clients K.
    #[arg(long, global = true)]
    pub clients: Option<usize>,

    /// Clients aggregated per round S.
    #[arg(long, global = true)]
    pub participants: Option<usize>,

    /// Sketch size as a fraction of the parameter count.
    #[arg(long = "m-ratio", global = true)]
    pub m_ratio: Option<f64>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Train every client each round; aggregate only the sampled ones.
    #[arg(long, global = true)]
    pub train_all_clients: bool,

    /// Send the consensus as one bit per entry, ties resolved to +1.
    #[arg(long, global = true)]
    pub strict_onebit_downlink: bool,

    /// Count the downlink broadcast once per round.
    #[arg(long, global = true)]
    pub broadcast_once: bool,

    /// exact or sampled.
    #[arg(long, global = true)]
    pub potential: Option<PotentialMode>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and write metrics.csv, summary.json and config.txt.
    Run,
    /// Run the self-check suite and print a JSON report.
    Check,
    /// Print the per-round communication ledger for the configuration.
    Cost,
    /// Time the Hadamard transform and a client update across sizes.
    Bench,
}

impl Cli {
    /// The configuration file (or defaults) with command line overrides.
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(a) = self.algo {
            c.algorithm = a;
        }
        if let Some(t) = self.rounds {
            c.hp.rounds = t;
        }
        if let Some(k) = self.clients {
            c.clients = k;
        }
        if let Some(s) = self.participants {
            c.hp.participants = s;
        }
        if let Some(r) = self.m_ratio {
            c.m_ratio = r;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.output_dir.clone_from(o);
        }
        c.train_all_clients |= self.train_all_clients;
        c.strict_onebit_downlink |= self.strict_onebit_downlink;
        c.broadcast_once |= self.broadcast_once;
        if let Some(p) = self.potential {
            c.potential = p;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Parses `args` (program name first), dispatches, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match dispatch(&cli, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        2
    } else {
        1
    }
}

/// Runs the subcommand, writing human-readable output to `out`.
pub fn dispatch<W: Write>(cli: &Cli, out: &mut W) -> Result<i32> {
    let config = cli.experiment()?;
    match cli.command {
        Command::Run => cmd_run(&config, out),
        Command::Check => cmd_check(&config, out),
        Command::Cost => cmd_cost(&config, out),
        Command::Bench => cmd_bench(out),
    }
}

fn cmd_run<W: Write>(config: &ExperimentConfig, out: &mut W) -> Result<i32> {
    let (data, federation) = config.build()?;
    let echo = config.echo();
    let result = federation::run(&federation, &data)?;
    federation::write_run(&config.output_dir, &result, &echo)?;
    std::fs::write(config.output_dir.join("config.txt"), &echo)?;
    writeln!(
        out,
        "{} rounds of {}: final accuracy {:.4}, potential {:.6} -> {:.6}, {} uplink bits, {} downlink bits",
        result.metrics.len(),
        result.algorithm,
        result.final_accuracy(),
        result.initial.potential,
        result.final_potential(),
        result.total_uplink_bits(),
        result.total_downlink_bits()
    )?;
    writeln!(out, "wrote {}", config.output_dir.display())?;
    Ok(0)
}

fn cmd_check<W: Write>(config: &ExperimentConfig, out: &mut W) -> Result<i32> {
    let report = diagnostics::run_check_suite(config.seed)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    writeln!(out, "{json}")?;
    Ok(if report.all_passed { 0 } else { 1 })
}

fn cmd_cost<W: Write>(config: &ExperimentConfig, out: &mut W) -> Result<i32> {
    let spec = config.nominal_model_spec();
    let n = spec.num_params();
    let m = federation::sketch_dim(n, config.m_ratio);
    let downlink = if config.strict_onebit_downlink {
        DownlinkMode::StrictOneBit
    } else {
        DownlinkMode::Ternary
    };
    let ledger = CostLedger::new(n, m, config.clients, config.hp.participants, downlink);
    let nominal = 1.0 - config.m_ratio / federation::FULL_PRECISION_BITS as f64;
    writeln!(
        out,
        "uplink reduction at m/n = {} vs {}-bit parameters: {:.2}% ({:.4}%)",
        config.m_ratio,
        federation::FULL_PRECISION_BITS,
        100.0 * nominal,
        100.0 * nominal
    )?;
    write!(out, "{}", ledger.render())?;
    Ok(0)
}

fn cmd_bench<W: Write>(out: &mut W) -> Result<i32> {
    writeln!(out, "{:<28} {:>12} {:>14}", "operation", "size", "time/call (us)")?;
    for log_n in (10..=20).step_by(2) {
        let len = 1usize << log_n;
        let mut x: Vec<f64> = (0..len).map(|i| (i as f64).sin()).collect();
        let reps = (1 << 22) / len;
        let start = Instant::now();
        for _ in 0..reps {
            fwht_in_place(&mut x)?;
        }
        let us = start.elapsed().as_secs_f64() * 1e6 / reps as f64;
        writeln!(out, "{:<28} {:>12} {:>14.2}", "hadamard transform", len, us)?;
    }
    for dim in [50, 500, 5000] {
        let fed = generate_synthetic(SyntheticTask::Logistic, 1, 200, dim, 0.0, 0)?;
        let spec = ModelSpec::logistic_regression(dim, 2);
        let n = spec.num_params();
        let op = SketchOperator::new(0, n, federation::sketch_dim(n, 0.1))?;
        let hp = HyperParams {
            batch_size: 32,
            ..HyperParams::default()
        };
        let mut state = ClientState::new(0, vec![0.0; n], 1.0, fed.data.clients[0].clone(), 0);
        let v = ConsensusVector::zeros(op.sketch_dim());
        let reps = 20;
        let start = Instant::now();
        for _ in 0..reps {
            state = client_update(&state, &v, &op, &spec, &hp, &fed.data.dataset)?.1;
        }
        let us = start.elapsed().as_secs_f64() * 1e6 / reps as f64;
        writeln!(out, "{:<28} {:>12} {:>14.2}", "client update (R = 5)", n, us)?;
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("onebit-fl").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config() {
        let cli = parse(&[
            "run",
            "--algo",
            "fedavg",
            "--rounds",
            "3",
            "--m-ratio",
            "0.2",
            "--broadcast-once",
        ]);
        let c = cli.experiment().unwrap();
        assert_eq!(c.algorithm, Algorithm::FedAvg);
        assert_eq!(c.hp.rounds, 3);
        assert_eq!(c.m_ratio, 0.2);
        assert!(c.broadcast_once);
    }

    #[test]
    fn cost_prints_reduction() {
        let cli = parse(&["cost"]);
        let mut buf = Vec::new();
        assert_eq!(dispatch(&cli, &mut buf).unwrap(), 0);
        let text = String::from_utf8(buf).unwrap();
        assert!(
            text.contains("uplink reduction at m/n = 0.1 vs 32-bit parameters: 99.69% (99.6875%)"),
            "{text}"
        );
    }

    #[test]
    fn invalid_arguments_exit_one() {
        assert_eq!(main_with_args(["onebit-fl", "cost", "--m-ratio", "1.5"]), 1);
        assert_eq!(main_with_args(["onebit-fl", "frobnicate"]), 1);
        assert_eq!(exit_code(&Error::numeric("x")), 2);
    }
}
