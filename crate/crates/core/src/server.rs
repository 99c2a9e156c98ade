//! Client sampling and sign aggregation.

use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::sketch::{ConsensusVector, OneBitSketch};

/// `S` distinct client ids drawn uniformly without replacement, ascending.
pub fn sample_clients(num_clients: usize, participants: usize, rng: &mut StreamRng) -> Result<Vec<usize>> {
    if participants == 0 || participants > num_clients {
        return Err(Error::InvalidConfig(format!(
            "cannot sample {participants} of {num_clients} clients"
        )));
    }
    if participants == num_clients {
        return Ok((0..num_clients).collect());
    }
    let mut ids = index::sample(rng, num_clients, participants).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

pub const TIE_TOLERANCE: f64 = 1e-12;

/// Weighted majority vote: `v_j = sign(Σ_k p_k z_kj)` with `sign(0) = 0`.
///
/// This minimizes `Σ_k p_k Σ_j max(0, −v_j z_kj)` over sign vectors; a zero
/// marks a coordinate where +1 and −1 are equally good. Per coordinate the
/// positive and negative weight masses are summed separately in ascending
/// weight order, so the result does not depend on the order of the input.
/// Masses equal to within [`TIE_TOLERANCE`] (relative) count as a tie, which
/// keeps ties like `0.1 + 0.2` vs `0.3` stable under rescaling of the weights.
pub fn aggregate(sketches: &[(&OneBitSketch, f64)]) -> Result<ConsensusVector> {
    let Some((first, _)) = sketches.first() else {
        return Err(Error::InvalidArgument("no sketches to aggregate".into()));
    };
    let m = first.len();
    for (k, (s, p)) in sketches.iter().enumerate() {
        if s.len() != m {
            return Err(Error::InvalidArgument(format!(
                "sketch {k} has dimension {}, expected {m}",
                s.len()
            )));
        }
        if !(*p > 0.0 && p.is_finite()) {
            return Err(Error::InvalidArgument(format!("sketch {k} has weight {p}")));
        }
    }
    let mut order: Vec<usize> = (0..sketches.len()).collect();
    order.sort_by(|&a, &b| sketches[a].1.total_cmp(&sketches[b].1));

    let mut pos = vec![0.0; m];
    let mut neg = vec![0.0; m];
    for &k in &order {
        let (s, p) = sketches[k];
        for j in 0..m {
            if s.sign(j) > 0 {
                pos[j] += p;
            } else {
                neg[j] += p;
            }
        }
    }
    let entries = pos
        .iter()
        .zip(&neg)
        .map(|(&a, &b)| {
            if (a - b).abs() <= TIE_TOLERANCE * (a + b) {
                0
            } else if a > b {
                1
            } else {
                -1
            }
        })
        .collect();
    ConsensusVector::from_entries(entries)
}
