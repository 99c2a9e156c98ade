//! Project a model with the randomized Hadamard sketch, quantize it to one
//! bit per entry and push it through the wire format.
//!
//!     cargo run --example sketch_wire_format

use onebit_fl::linalg;
use onebit_fl::sketch::{ConsensusVector, DownlinkMode, OneBitSketch, SketchOperator};

fn main() -> onebit_fl::Result<()> {
    let n = 1000;
    let m = 100;
    let op = SketchOperator::new(7, n, m)?;
    println!(
        "n = {n}, padded to {}, m = {m}, ‖Φ‖² ≤ {}",
        op.padded_dim(),
        op.norm_squared()
    );

    let w: Vec<f64> = (0..n).map(|i| (i as f64 * 0.01).sin()).collect();
    let z = op.forward(&w)?;
    let back = op.adjoint(&z)?;
    println!(
        "‖w‖² = {:.3}, ‖Φw‖² = {:.3}, ⟨w, ΦᵀΦw⟩ = {:.3}",
        linalg::norm_sq(&w),
        linalg::norm_sq(&z),
        linalg::dot(&w, &back)
    );

    let sketch = op.sketch(&w)?;
    let msg = sketch.encode_message();
    println!(
        "sketch: {} payload bits, {} bytes on the wire, first signs {:?}",
        sketch.payload_bits(),
        msg.len(),
        &sketch.signs()[..8]
    );
    assert_eq!(OneBitSketch::decode_message(&msg)?, sketch);

    let consensus = ConsensusVector::from_entries((0..m).map(|j| [1, 0, -1][j % 3]).collect())?;
    for mode in [DownlinkMode::Ternary, DownlinkMode::StrictOneBit] {
        let received = consensus.as_received(mode);
        println!(
            "downlink {mode:?}: {} bits, zeros after receipt: {}",
            consensus.payload_bits(mode),
            received.entries().iter().filter(|&&e| e == 0).count()
        );
    }
    assert_eq!(ConsensusVector::decode_message(&consensus.encode_message())?, consensus);
    Ok(())
}
