//! Small numeric helpers shared across modules.
//!
//! Reductions here are deterministic under any rayon thread count: floating
//! sums are chunked at a fixed size and the per-chunk partials are combined
//! in index order, so the rounding sequence never depends on scheduling.

use rayon::prelude::*;

const CHUNK: usize = 4096;

/// Sum of `f(i)` over `0..n`, identical for every thread count.
pub fn det_sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    if n == 0 {
        return 0.0;
    }
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(n);
            let mut acc = 0.0;
            for i in start..end {
                acc += f(i);
            }
            acc
        })
        .collect();
    partials.iter().sum()
}

/// Deterministic parallel sum of a slice.
pub fn det_sum(xs: &[f64]) -> f64 {
    det_sum_indexed(xs.len(), |i| xs[i])
}

/// Maximum of `|x|` over a slice (exact, order-independent).
pub fn max_abs(xs: &[f64]) -> f64 {
    xs.par_chunks(CHUNK)
        .map(|c| c.iter().fold(0.0f64, |m, &x| m.max(x.abs())))
        .reduce(|| 0.0, f64::max)
}

/// Standard normal density.
pub fn gauss(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_sum_matches_sequential() {
        let xs: Vec<f64> = (0..10_000).map(|i| (i as f64).sin()).collect();
        let seq: f64 = {
            // same chunking applied sequentially
            let mut total = 0.0;
            for c in xs.chunks(4096) {
                let mut acc = 0.0;
                for &x in c {
                    acc += x;
                }
                total += acc;
            }
            total
        };
        assert_eq!(det_sum(&xs), seq);
    }

    #[test]
    fn max_abs_handles_negatives() {
        assert_eq!(max_abs(&[1.0, -3.5, 2.0]), 3.5);
        assert_eq!(max_abs(&[]), 0.0);
    }

    #[test]
    fn gauss_peak() {
        let p = gauss(0.5, 0.5, 0.1);
        assert!((p - 3.989_422_804_014_327).abs() < 1e-12);
    }
}
