mod common;

use nvfp4_emu::analysis::{ablation_report, default_thresholds, threshold_sweep};
use nvfp4_emu::block_quant::{quantize_block, quantize_tensor_simulated};
use nvfp4_emu::codecs::{decode_fp8_e4m3, Fp8E4M3};
use nvfp4_emu::rng::ValueRounding;
use nvfp4_emu::tensor::mse;
use nvfp4_emu::{
    dequantize_tensor, quantize_block_adaptive, quantize_tensor, quantize_tensor_detailed,
    selection_stats, Format, QuantConfig, Rounding, ScaleMode, SelectionRule, Tensor,
};
use proptest::prelude::*;

fn block_mse_pair(block: &[f32], alpha: f32) -> (f64, f64) {
    let fixed = quantize_block(block, alpha, 6.0, &mut ValueRounding::NearestEven).unwrap();
    let adaptive =
        quantize_block_adaptive(block, alpha, SelectionRule::Mse, Rounding::NearestEven, 0)
            .unwrap();
    (fixed.err_mse, adaptive.err_mse)
}

#[test]
fn adaptive_dominates_fixed6_per_block() {
    let sources = [
        common::gaussian(vec![4000, 16], 1),
        common::uniform(vec![4000, 16], -3.0, 3.0, 2),
        common::heavy_tailed(vec![4000, 16], 3),
    ];
    let mut checked = 0;
    for x in &sources {
        let alpha = nvfp4_emu::block_quant::compute_tensor_scale(x.data(), 6.0, 256.0).unwrap();
        for block in x.data().chunks(16) {
            let (fixed, adaptive) = block_mse_pair(block, alpha);
            assert!(adaptive <= fixed, "adaptive {adaptive} > fixed {fixed} on {block:?}");
            checked += 1;
        }
    }
    assert_eq!(checked, 12_000);
}

#[test]
fn requantizing_a_reconstruction_is_stable() {
    let x = common::gaussian(vec![64, 64], 17);
    let cfg = QuantConfig::nvfp4();
    let q1 = quantize_tensor(&x, &cfg).unwrap();
    let d1 = dequantize_tensor(&q1).unwrap();
    let q2 = quantize_tensor(&d1, &cfg).unwrap();
    let (a1, a2) = (q1.tensor_scale(), q2.tensor_scale());
    assert!((a1.to_bits() as i64 - a2.to_bits() as i64).abs() <= 1);
    assert_eq!(q1.block_scales(), q2.block_scales());
    assert_eq!(q1.packed_codes(), q2.packed_codes());
}

#[test]
fn blocks_are_independent_given_alpha() {
    let x = common::gaussian(vec![8, 64], 4);
    let cfg = QuantConfig::nvfp4().with_tensor_scale(0.01);
    let q = quantize_tensor(&x, &cfg).unwrap();
    let mut y = x.clone();
    // Perturb block 5 only (row 1, second block).
    for v in &mut y.data_mut()[64 + 16..64 + 32] {
        *v *= 3.0;
    }
    let qy = quantize_tensor(&y, &cfg).unwrap();
    for b in 0..q.num_blocks() {
        if b != 5 {
            assert_eq!(q.block_scales()[b], qy.block_scales()[b], "block {b}");
            for i in b * 16..(b + 1) * 16 {
                assert_eq!(q.code(i), qy.code(i));
            }
        }
    }
}

#[test]
fn scales_stay_within_e4m3_and_max_blocks_choosing_4_fit() {
    for seed in 0..5 {
        let x = common::heavy_tailed(vec![128, 128], 100 + seed);
        let (q, recs) =
            quantize_tensor_detailed(&x, &QuantConfig::adaptive(SelectionRule::Mse)).unwrap();
        for (b, rec) in recs.iter().enumerate() {
            let s = decode_fp8_e4m3(Fp8E4M3::from_bits(q.block_scales()[b]));
            assert!(s.is_finite() && s <= 448.0);
            if rec.chosen_m == 4 {
                assert!(s <= 384.0, "block {b} scale {s}");
            }
        }
    }
}

#[test]
fn selection_follows_the_rule_on_candidates() {
    let x = common::gaussian(vec![256, 64], 9);
    for rule in SelectionRule::ALL {
        let (_, recs) = quantize_tensor_detailed(&x, &QuantConfig::adaptive(rule)).unwrap();
        for rec in &recs {
            let [m6, m4] = rec.candidates.expect("adaptive keeps both candidates");
            let want4 = m4.score(rule) < m6.score(rule);
            assert_eq!(rec.chosen_m == 4, want4);
            assert_eq!(rec.metrics, if want4 { m4 } else { m6 });
        }
    }
}

#[test]
fn stochastic_rounding_is_deterministic_per_seed() {
    let x = common::gaussian(vec![32, 48], 12);
    let cfg = |seed| QuantConfig::adaptive(SelectionRule::Mse).with_rounding(Rounding::Stochastic { seed });
    let a = quantize_tensor(&x, &cfg(5)).unwrap();
    let b = quantize_tensor(&x, &cfg(5)).unwrap();
    let c = quantize_tensor(&x, &cfg(6)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.packed_codes(), c.packed_codes());
}

#[test]
fn stochastic_rounding_does_not_depend_on_thread_count() {
    let x = common::gaussian(vec![64, 80], 13);
    let cfg = QuantConfig::nvfp4().with_rounding(Rounding::Stochastic { seed: 21 });
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| quantize_tensor(&x, &cfg).unwrap());
    let b = many.install(|| quantize_tensor(&x, &cfg).unwrap());
    assert_eq!(a, b);
}

#[test]
fn nvfp4_beats_mxfp4_on_gaussian() {
    let x = common::gaussian(vec![128, 128], 31);
    let nv = mse(&x, &dequantize_tensor(&quantize_tensor(&x, &QuantConfig::nvfp4()).unwrap()).unwrap()).unwrap();
    let mx = mse(&x, &dequantize_tensor(&quantize_tensor(&x, &QuantConfig::mxfp4()).unwrap()).unwrap()).unwrap();
    assert!(nv <= mx, "nvfp4 {nv} mxfp4 {mx}");
}

#[test]
fn mxfp4_containers_carry_unit_tensor_scale() {
    let x = common::gaussian(vec![4, 40], 2);
    let q = quantize_tensor(&x, &QuantConfig::mxfp4()).unwrap();
    assert_eq!(q.format(), Format::Mxfp4);
    assert_eq!(q.tensor_scale(), 1.0);
    assert_eq!(q.num_blocks(), 8);
}

#[test]
fn table_block_as_a_tensor() {
    let x = Tensor::new(vec![1, 4], vec![10.0, 20.0, 30.0, 40.0]).unwrap();
    let cfg = QuantConfig::adaptive(SelectionRule::Mse).with_tensor_scale(1.0);
    let q = quantize_tensor(&x, &cfg).unwrap();
    assert_eq!(decode_fp8_e4m3(Fp8E4M3::from_bits(q.block_scales()[0])), 10.0);
    let nibbles: Vec<u8> = q.unpack_codes().iter().map(|c| c.bits()).collect();
    assert_eq!(nibbles, vec![0x2, 0x4, 0x5, 0x6]);
    assert_eq!(dequantize_tensor(&q).unwrap(), x);
}

#[test]
fn invalid_combinations_are_rejected() {
    let x = common::gaussian(vec![2, 32], 0);
    let cfg = QuantConfig::mxfp4().with_scale_mode(ScaleMode::Adaptive46);
    assert!(matches!(quantize_tensor(&x, &cfg), Err(nvfp4_emu::Error::InvalidConfig(_))));
    let bad = Tensor::new(vec![2], vec![1.0, f32::NAN]).unwrap();
    assert!(quantize_tensor(&bad, &QuantConfig::nvfp4()).is_err());
}

#[test]
fn selection_stats_on_gaussian() {
    let x = common::gaussian(vec![1024, 1024], 77);
    let s = selection_stats(&x, &QuantConfig::adaptive(SelectionRule::Mse)).unwrap();
    assert_eq!(s.blocks, 1024 * 64);
    assert!(s.fraction_4 > 0.0 && s.fraction_4 < 1.0, "fraction {}", s.fraction_4);
    assert!(s.mse_by_rule.mse <= s.mse_all_6);
    assert!(s.mse_by_rule.mse <= s.mse_all_4);
    assert!(s.mse_by_rule.mse <= s.mse_by_rule.l1);
    assert!(s.mse_by_rule.mse <= s.mse_by_rule.absmax);
}

#[test]
fn ablation_ordering() {
    for seed in 0..5 {
        let x = common::gaussian(vec![64, 128], 200 + seed);
        let r = ablation_report(&x, &QuantConfig::nvfp4()).unwrap();
        assert!(r.mse_hp_values <= 1e-10 * r.mean_square, "{r:?}");
        assert!(r.mse_full >= r.mse_hp_scales, "{r:?}");
    }
}

#[test]
fn threshold_sweep_shape() {
    let x = common::gaussian(vec![256, 256], 5);
    let pts = threshold_sweep(&x, &default_thresholds()).unwrap();
    assert_eq!(pts[0].mse, 0.0);
    for w in pts.windows(2) {
        assert!(w[1].mse >= w[0].mse, "{:?}", w);
    }
    let full = mse(&x, &quantize_tensor_simulated(&x, &QuantConfig::nvfp4()).unwrap()).unwrap();
    assert_eq!(pts[12].mse, full);
    let (i, _) = pts
        .windows(2)
        .map(|w| w[1].mse - w[0].mse)
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert!(pts[i + 1].x > 4.0, "largest step ends at {}", pts[i + 1].x);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn dominance_holds_for_arbitrary_blocks(
        block in prop::collection::vec(-1000.0f32..1000.0, 1..=16),
        alpha_exp in -8i32..4,
    ) {
        let alpha = 2f32.powi(alpha_exp);
        let (fixed, adaptive) = block_mse_pair(&block, alpha);
        prop_assert!(adaptive <= fixed);
    }

    #[test]
    fn roundtrip_error_bounded_by_scale(
        data in prop::collection::vec(-50.0f32..50.0, 16..=96),
    ) {
        let n = data.len();
        let x = Tensor::new(vec![n], data).unwrap();
        let q = quantize_tensor(&x, &QuantConfig::nvfp4()).unwrap();
        let d = dequantize_tensor(&q).unwrap();
        let alpha = q.tensor_scale() as f64;
        for (i, (&a, &b)) in x.data().iter().zip(d.data()).enumerate() {
            let step = alpha * decode_fp8_e4m3(Fp8E4M3::from_bits(q.block_scales()[i / 16]));
            // Half of the widest FP4 gap, plus E4M3 scale slack.
            prop_assert!(((a - b) as f64).abs() <= 1.1 * step + 1e-6, "i {} a {} b {}", i, a, b);
        }
    }
}
