//! Runs the self-check suite, then evaluates the convergence bound on a
//! short federated run with measured constants.
//!
//!     cargo run --release --example convergence_diagnostics

use onebit_fl::config::ExperimentConfig;
use onebit_fl::diagnostics::{self, TheoremInputs};
use onebit_fl::federation;
use onebit_fl::rng;

fn main() -> onebit_fl::Result<()> {
    let report = diagnostics::run_check_suite(0)?;
    for c in &report.checks {
        println!(
            "{:<5} {:<40} {:>12.4e} vs {:>12.4e}",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.measured,
            c.bound
        );
    }

    let experiment = ExperimentConfig::parse("K = 10\nS = 5\ndim = 10\nT = 60\neta = 0.05\nmu = 0.01\ngamma = 100\n")?;
    let (data, config) = experiment.build()?;
    let out = federation::run(&config, &data)?;
    let op = config.operator()?;
    let hp = &config.hp;
    let mut r = rng::stream(0, rng::EVAL);

    let w0 = config.spec.init_params(config.seed);
    let all: Vec<usize> = data.clients.iter().flat_map(|c| c.train.iter().copied()).collect();
    let task_l = diagnostics::estimate_task_smoothness(&config.spec, &data.dataset, &all, &w0, 50, &mut r)?;
    let probes: Vec<(&[f64], &[usize])> = out
        .states
        .iter()
        .map(|s| (s.model.as_slice(), s.train.as_slice()))
        .collect();
    let consts =
        diagnostics::estimate_gradient_constants(&config.spec, &data.dataset, &probes, hp.batch_size, 50, &mut r)?;
    let inputs = TheoremInputs {
        initial_potential: out.initial.potential,
        potential_lower_bound: diagnostics::potential_lower_bound(hp, op.sketch_dim()),
        eta: hp.eta,
        local_steps: hp.local_steps,
        rounds: hp.rounds,
        smoothness: diagnostics::smoothness_constant(task_l, hp, &op),
        gradient_variance: consts.variance,
        delta_max: out.metrics.last().map_or(0.0, |m| m.delta_max),
        lambda: hp.lambda,
        sampling_error: out.sampling_error(),
    };
    let mean_grad = out.metrics.iter().map(|m| m.grad_norm_sq).sum::<f64>() / out.metrics.len() as f64;
    println!();
    println!(
        "L_F = {:.3}, σ̂² = {:.4}, Δ_max = {:.4}, E_S = {:.4}",
        inputs.smoothness, inputs.gradient_variance, inputs.delta_max, inputs.sampling_error
    );
    match diagnostics::theorem_rhs(&inputs) {
        Some(rhs) => println!("mean Σ p_k‖∇F̃_k‖² over rounds = {mean_grad:.4e}, bound = {rhs:.4e}"),
        None => println!("step size too large for the bound (η·L_F ≥ 2)"),
    }
    Ok(())
}
