use crate::error::{Error, Result};

/// Orthonormal fast Walsh–Hadamard transform, in place.
///
/// Applies `H = H_2^{⊗k} / sqrt(len)` (Sylvester ordering) with an
/// iterative radix-2 butterfly, so stack depth does not grow with the
/// length. `H` is symmetric and orthonormal, hence an involution.
pub fn fwht_in_place(x: &mut [f64]) -> Result<()> {
    let len = x.len();
    if len == 0 || !len.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "fwht length {len} is not a power of two"
        )));
    }
    let mut half = 1;
    while half < len {
        for block in x.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (s, d) = (*a + *b, *a - *b);
                *a = s;
                *b = d;
            }
        }
        half *= 2;
    }
    let norm = 1.0 / (len as f64).sqrt();
    x.iter_mut().for_each(|v| *v *= norm);
    Ok(())
}
