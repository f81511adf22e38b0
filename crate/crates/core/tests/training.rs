mod common;

use nvfp4_emu::qlinear::{emulated_fp4_matmul, linear_dgrad, linear_forward, linear_wgrad};
use nvfp4_emu::transforms::{apply_rht, inverse_rht, quantize_weights_2d, RhtSpec};
use nvfp4_emu::{dequantize_tensor, quantize_tensor, QuantConfig, Rounding, ScaleMode, Tensor};

#[test]
fn matmul_matches_wide_oracle() {
    let a = common::gaussian(vec![64, 64], 1);
    let b = common::gaussian(vec![64, 64], 2);
    let cfg = QuantConfig::nvfp4();
    let (aq, bq) = (quantize_tensor(&a, &cfg).unwrap(), quantize_tensor(&b, &cfg).unwrap());
    let got = emulated_fp4_matmul(&aq, &bq).unwrap();
    let want = common::matmul_f64(
        dequantize_tensor(&aq).unwrap().data(),
        dequantize_tensor(&bq).unwrap().data(),
        64,
        64,
        64,
    );
    let err = common::rel_frobenius(got.data(), &want);
    assert!(err <= 1e-5, "relative error {err}");
}

#[test]
fn matmul_is_thread_count_invariant() {
    let a = common::gaussian(vec![48, 96], 3);
    let b = common::gaussian(vec![96, 40], 4);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let cfg = QuantConfig::nvfp4();
                emulated_fp4_matmul(&quantize_tensor(&a, &cfg).unwrap(), &quantize_tensor(&b, &cfg).unwrap())
                    .unwrap()
            })
    };
    assert_eq!(run(1), run(6));
}

#[test]
fn rht_preserves_norm_and_inverts() {
    let mut r = common::rng(8);
    for i in 0..1000 {
        let x = common::gaussian(vec![1, 16], 1000 + i);
        let spec = RhtSpec::new(16, rand::Rng::gen(&mut r)).unwrap();
        let y = apply_rht(&x, &spec).unwrap();
        let nx: f64 = x.data().iter().map(|&v| (v as f64).powi(2)).sum();
        let ny: f64 = y.data().iter().map(|&v| (v as f64).powi(2)).sum();
        assert!(((ny - nx) / nx).abs() <= 1e-5);
        let back = inverse_rht(&y, &spec).unwrap();
        let err: f64 = back.data().iter().zip(x.data()).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum();
        assert!((err / nx).sqrt() <= 1e-6);
    }
}

#[test]
fn rht_spreads_outliers() {
    // One large outlier per 16-value block.
    let x = Tensor::from_fn(vec![64, 16], |i| if i % 16 == 3 { 40.0 } else { ((i * 7) % 13) as f32 * 0.1 - 0.6 });
    let y = apply_rht(&x, &RhtSpec::new(16, 5).unwrap()).unwrap();
    for (bx, by) in x.data().chunks(16).zip(y.data().chunks(16)) {
        let peak = |b: &[f32]| b.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(peak(by) < 0.5 * peak(bx));
    }
}

#[test]
fn weight_tiles_transpose_exactly() {
    let w = common::gaussian(vec![40, 56], 6);
    let cfg = QuantConfig::nvfp4().with_scale_mode(ScaleMode::Adaptive46);
    let a = dequantize_tensor(&quantize_weights_2d(&w, &cfg).unwrap()).unwrap();
    let b = dequantize_tensor(&quantize_weights_2d(&w.transpose().unwrap(), &cfg).unwrap()).unwrap();
    assert_eq!(a.transpose().unwrap(), b);
}

fn exact_matmul_at_b(a: &Tensor, b: &Tensor) -> Vec<f64> {
    // a: [B, m], b: [B, n] -> a^T b
    let (bs, m) = a.dims2().unwrap();
    let n = b.dims2().unwrap().1;
    let mut out = vec![0.0; m * n];
    for r in 0..bs {
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += a.data()[r * m + i] as f64 * b.data()[r * n + j] as f64;
            }
        }
    }
    out
}

#[test]
fn forward_and_dgrad_track_exact_products() {
    let x = common::gaussian(vec![32, 64], 10);
    let w = common::gaussian(vec![48, 64], 11);
    let dy = common::gaussian(vec![32, 48], 12);
    let cfg = QuantConfig::nvfp4().with_rounding(Rounding::Stochastic { seed: 1 });
    let y = linear_forward(&x, &w, &cfg).unwrap();
    let want = common::matmul_f64(x.data(), w.transpose().unwrap().data(), 32, 64, 48);
    assert!(common::rel_frobenius(y.data(), &want) < 0.2);
    let dx = linear_dgrad(&dy, &w, &cfg).unwrap();
    let want = common::matmul_f64(dy.data(), w.data(), 32, 48, 64);
    assert!(common::rel_frobenius(dx.data(), &want) < 0.25);
}

#[test]
fn wgrad_seed_average_converges() {
    let x = common::gaussian(vec![40, 32], 20);
    let dy = common::gaussian(vec![40, 24], 21);
    let want = exact_matmul_at_b(&dy, &x);
    let avg_err = |n: u64| {
        let mut acc = vec![0.0f64; want.len()];
        for s in 0..n {
            let cfg = QuantConfig::nvfp4().with_rounding(Rounding::Stochastic { seed: s });
            let g = linear_wgrad(&dy, &x, &cfg).unwrap();
            acc.iter_mut().zip(g.data()).for_each(|(a, &v)| *a += v as f64 / n as f64);
        }
        let acc32: Vec<f32> = acc.iter().map(|&v| v as f32).collect();
        common::rel_frobenius(&acc32, &want)
    };
    let (e1, e16) = (avg_err(1), avg_err(16));
    assert!(e16 < e1 / 2.0, "1 seed {e1}, 16 seeds {e16}");
}

#[test]
fn adaptive_forward_at_alpha_parity_is_no_worse() {
    let x = common::gaussian(vec![64, 128], 30);
    let w = common::gaussian(vec![64, 128], 31);
    let want = common::matmul_f64(x.data(), w.transpose().unwrap().data(), 64, 128, 64);
    let fixed = QuantConfig::nvfp4().with_fp8_cap(256.0);
    let adaptive = QuantConfig::nvfp4().with_scale_mode(ScaleMode::Adaptive46);
    let ef = common::rel_frobenius(linear_forward(&x, &w, &fixed).unwrap().data(), &want);
    let ea = common::rel_frobenius(linear_forward(&x, &w, &adaptive).unwrap().data(), &want);
    assert!(ea <= ef, "adaptive {ea} fixed {ef}");
}
