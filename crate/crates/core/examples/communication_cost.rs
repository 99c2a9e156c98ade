//! Per-round traffic of one-bit sketches against 32-bit model exchange for a
//! 784-256-10 MLP with 20 clients.
//!
//!     cargo run --example communication_cost

use onebit_fl::federation::{self, CostLedger};
use onebit_fl::model::{Activation, ModelSpec};
use onebit_fl::sketch::DownlinkMode;

fn main() {
    let n = ModelSpec::mlp(vec![784, 256, 10], Activation::Tanh).num_params();
    for ratio in [0.05, 0.1, 0.25] {
        let m = federation::sketch_dim(n, ratio);
        println!(
            "m/n = {ratio}: uplink reduction {:.4}%",
            100.0 * federation::comm_cost_reduction(32, n, m)
        );
    }
    let m = federation::sketch_dim(n, 0.1);
    println!();
    print!("{}", CostLedger::new(n, m, 20, 20, DownlinkMode::StrictOneBit).render());
}
