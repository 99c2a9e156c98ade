//! Personalized one-bit federation against FedAvg and purely local training
//! on a non-i.i.d. synthetic task.
//!
//!     cargo run --release --example compare_algorithms

use onebit_fl::config::ExperimentConfig;
use onebit_fl::federation::{self, Algorithm};

fn main() -> onebit_fl::Result<()> {
    let experiment = ExperimentConfig::parse("K = 20\nS = 10\ndim = 50\nheterogeneity = 1.0\nT = 100\n")?;
    let (data, base) = experiment.build()?;
    println!(
        "{} clients, n = {} parameters, m = {} sketch bits",
        data.num_clients(),
        base.num_params(),
        base.sketch_dim()
    );
    println!(
        "{:<10} {:>9} {:>10} {:>10} {:>14} {:>14}",
        "algorithm", "accuracy", "Ψ⁰", "Ψᵀ", "uplink bits", "downlink bits"
    );
    for algorithm in [Algorithm::Pfed1bs, Algorithm::FedAvg, Algorithm::Local] {
        let mut config = base.clone();
        config.algorithm = algorithm;
        let out = federation::run(&config, &data)?;
        println!(
            "{:<10} {:>9.4} {:>10.4} {:>10.4} {:>14} {:>14}",
            algorithm.to_string(),
            out.final_accuracy(),
            out.initial.potential,
            out.final_potential(),
            out.total_uplink_bits(),
            out.total_downlink_bits()
        );
    }
    Ok(())
}
