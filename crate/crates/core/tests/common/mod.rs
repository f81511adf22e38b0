#![allow(dead_code)]

use nvfp4_emu::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| StandardNormal.sample(&mut r))
}

pub fn uniform(shape: Vec<usize>, lo: f32, hi: f32, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi))
}

/// Student-t with 2 degrees of freedom: heavy tails, occasional large outliers.
pub fn heavy_tailed(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let t = StudentT::new(2.0f32).unwrap();
    Tensor::from_fn(shape, |_| t.sample(&mut r))
}

/// Brute-force nearest FP4 value: argmin over the distinct magnitudes, ties to the
/// even mantissa (even index in the magnitude table).
pub fn fp4_oracle(x: f64) -> f64 {
    const MAGS: [f64; 8] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];
    let a = x.abs();
    let mut best = 0usize;
    for (i, m) in MAGS.iter().enumerate().skip(1) {
        let d = (m - a).abs();
        let db = (MAGS[best] - a).abs();
        if d < db || (d == db && i % 2 == 0 && best % 2 == 1) {
            best = i;
        }
    }
    MAGS[best].copysign(x)
}

/// Relative Frobenius error of `got` against an `f64` reference.
pub fn rel_frobenius(got: &[f32], want: &[f64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(&g, &w)| (g as f64 - w).powi(2)).sum();
    let den: f64 = want.iter().map(|w| w * w).sum();
    (num / den).sqrt()
}

/// `A B` in f64 for row-major `A: [m, k]`, `B: [k, n]`.
pub fn matmul_f64(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p] as f64;
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j] as f64;
            }
        }
    }
    out
}
