//! Reference implementations used as test oracles. Everything here is
//! written directly from the defining formulas, without calling the fast
//! paths it is compared against.

#![allow(dead_code)]

use onebit_fl::sketch::SketchOperator;

/// Row-major dense matrix.
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.get(r, c) * x[c]).sum())
            .collect()
    }

    pub fn transpose_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.get(r, c) * y[r]).sum())
            .collect()
    }

    /// `A·Aᵀ`.
    pub fn gram_rows(&self) -> Dense {
        let mut data = vec![0.0; self.rows * self.rows];
        for i in 0..self.rows {
            for j in 0..self.rows {
                data[i * self.rows + j] = (0..self.cols).map(|c| self.get(i, c) * self.get(j, c)).sum();
            }
        }
        Dense {
            rows: self.rows,
            cols: self.rows,
            data,
        }
    }
}

/// Normalized Sylvester–Hadamard matrix of order `n` (a power of two),
/// built by the recursion `H₂ₙ = [[Hₙ, Hₙ], [Hₙ, −Hₙ]] / √2`.
pub fn dense_hadamard(n: usize) -> Dense {
    assert!(n.is_power_of_two());
    let mut h = vec![1.0];
    let mut size = 1;
    while size < n {
        let next = size * 2;
        let mut g = vec![0.0; next * next];
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for r in 0..size {
            for c in 0..size {
                let v = h[r * size + c] * s;
                g[r * next + c] = v;
                g[r * next + c + size] = v;
                g[(r + size) * next + c] = v;
                g[(r + size) * next + c + size] = -v;
            }
        }
        h = g;
        size = next;
    }
    Dense {
        rows: n,
        cols: n,
        data: h,
    }
}

/// `scale · S · H · D` assembled entry by entry from the operator's sign
/// flips and sampled rows. With `padded` the matrix has `n_pad` columns,
/// otherwise only the first `n`.
pub fn dense_sketch(op: &SketchOperator, padded: bool) -> Dense {
    let h = dense_hadamard(op.padded_dim());
    let cols = if padded { op.padded_dim() } else { op.input_dim() };
    let scale = (op.padded_dim() as f64 / op.sketch_dim() as f64).sqrt();
    let mut data = vec![0.0; op.sketch_dim() * cols];
    for (r, &row) in op.sample_indices().iter().enumerate() {
        for c in 0..cols {
            data[r * cols + c] = scale * h.get(row, c) * op.sign_flips()[c];
        }
    }
    Dense {
        rows: op.sketch_dim(),
        cols,
        data,
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by plain
/// power iteration.
pub fn dense_top_eigenvalue(a: &Dense, iterations: usize) -> f64 {
    let mut v: Vec<f64> = (0..a.cols).map(|i| 1.0 + 0.01 * i as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let av = a.mul_vec(&v);
        let norm = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        lambda = norm / vnorm;
        if norm == 0.0 {
            return 0.0;
        }
        v = av.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Central difference `(f(x + εe_i) − f(x − εe_i)) / 2ε`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], i: usize, eps: f64) -> f64 {
    let mut plus = x.to_vec();
    plus[i] += eps;
    let mut minus = x.to_vec();
    minus[i] -= eps;
    (f(&plus) - f(&minus)) / (2.0 * eps)
}

/// Relative error of `got` against `want`, with `floor` guarding against
/// division by values that are zero up to rounding.
pub fn rel_err(got: f64, want: f64, floor: f64) -> f64 {
    (got - want).abs() / got.abs().max(want.abs()).max(floor)
}

/// Server objective `Σ_k p_k · ½(‖z_k‖₁ − ⟨v, z_k⟩)`.
pub fn server_objective(v: &[f64], sketches: &[Vec<f64>], weights: &[f64]) -> f64 {
    sketches
        .iter()
        .zip(weights)
        .map(|(z, p)| {
            let l1: f64 = z.iter().map(|x| x.abs()).sum();
            let inner: f64 = z.iter().zip(v).map(|(a, b)| a * b).sum();
            p * 0.5 * (l1 - inner)
        })
        .sum()
}

/// Minimum of the server objective over all of `{±1}^m`.
pub fn brute_force_server_minimum(m: usize, sketches: &[Vec<f64>], weights: &[f64]) -> f64 {
    (0..1u64 << m)
        .map(|mask| {
            let v: Vec<f64> = (0..m).map(|j| if mask >> j & 1 == 1 { 1.0 } else { -1.0 }).collect();
            server_objective(&v, sketches, weights)
        })
        .fold(f64::INFINITY, f64::min)
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Exact `E‖(1/S)Σ_{k∈S} z_k − z̄‖²` over uniformly drawn `S`-subsets, by
/// enumerating every subset.
pub fn exact_sampling_variance(z: &[Vec<f64>], s: usize) -> f64 {
    let k = z.len();
    let m = z[0].len();
    let mean: Vec<f64> = (0..m).map(|j| z.iter().map(|v| v[j]).sum::<f64>() / k as f64).collect();
    let all = subsets(k, s);
    let total: f64 = all
        .iter()
        .map(|sub| {
            (0..m)
                .map(|j| {
                    let avg = sub.iter().map(|&c| z[c][j]).sum::<f64>() / s as f64;
                    (avg - mean[j]).powi(2)
                })
                .sum::<f64>()
        })
        .sum();
    total / all.len() as f64
}
