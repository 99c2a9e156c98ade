//! The server's weighted majority vote over client sketches, including a
//! tie, checked against exhaustive search.
//!
//!     cargo run --example sign_aggregation

use onebit_fl::server::aggregate;
use onebit_fl::sketch::OneBitSketch;

fn cost(v: &[i8], votes: &[(Vec<i8>, f64)]) -> f64 {
    votes
        .iter()
        .map(|(z, p)| p * v.iter().zip(z).map(|(&a, &b)| f64::from((-a * b).max(0))).sum::<f64>())
        .sum()
}

fn main() -> onebit_fl::Result<()> {
    let votes = vec![
        (vec![1, 1, -1, 1, -1], 0.5),
        (vec![-1, 1, -1, 1, 1], 0.25),
        (vec![-1, -1, 1, 1, 1], 0.25),
    ];
    let sketches: Vec<OneBitSketch> = votes
        .iter()
        .map(|(s, _)| OneBitSketch::from_signs(s))
        .collect::<Result<_, _>>()?;
    let pairs: Vec<(&OneBitSketch, f64)> = sketches.iter().zip(votes.iter().map(|(_, p)| *p)).collect();
    let v = aggregate(&pairs)?;
    println!("consensus: {:?} (0 marks a tie)", v.entries());

    let m = 5;
    let best = (0..1u32 << m)
        .map(|mask| {
            let cand: Vec<i8> = (0..m).map(|j| if mask >> j & 1 == 1 { 1 } else { -1 }).collect();
            cost(&cand, &votes)
        })
        .fold(f64::INFINITY, f64::min);
    for fill in [1, -1] {
        let resolved: Vec<i8> = v.entries().iter().map(|&e| if e == 0 { fill } else { e }).collect();
        println!(
            "ties → {fill:+}: disagreement {:.2} (minimum {best:.2})",
            cost(&resolved, &votes)
        );
    }
    Ok(())
}
