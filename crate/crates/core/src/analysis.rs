//! Diagnostic experiments on tensors: rounding-error curves, error-source ablations,
//! threshold sweeps and format comparisons.
//!
//! Everything here reports reconstruction MSE, the tensor-level stand-in for
//! downstream model quality.

use serde::Serialize;

use crate::block_quant::{quantize_tensor_detailed, quantize_tensor_simulated, BlockRecord};
use crate::codecs::{decode_fp4, encode_fp4_rne};
use crate::config::{QuantConfig, ScaleMode, SelectionRule, FP8_CAP_ADAPTIVE};
use crate::error::{Error, Result};
use crate::tensor::{mse, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub m: f64,
    pub v: f64,
    pub relative_error: f64,
}

/// Rounding error of `v` on an evenly spaced grid over `[0, m]`, relative to `m`.
///
/// With the block maximum scaled onto `m`, a value `v` in `[0, m]` is cast to FP4
/// directly, so the error relative to the block maximum is `|fp4(v) - v| / m`.
pub fn error_curve(m: f64, n_points: usize) -> Result<Vec<CurvePoint>> {
    if n_points < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 points, got {n_points}")));
    }
    if m != 4.0 && m != 6.0 {
        return Err(Error::InvalidInput(format!("block target must be 4 or 6, got {m}")));
    }
    (0..n_points)
        .map(|i| {
            let v = m * i as f64 / (n_points - 1) as f64;
            Ok(CurvePoint {
                m,
                v,
                relative_error: relative_rounding_error(m, v)?,
            })
        })
        .collect()
}

/// `|fp4(v) - v| / m` for a single value.
pub fn relative_rounding_error(m: f64, v: f64) -> Result<f64> {
    Ok((decode_fp4(encode_fp4_rne(v)?) - v).abs() / m)
}

/// Reconstruction MSE with each error source removed in turn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AblationReport {
    pub mean_square: f64,
    pub mse_full: f64,
    pub mse_hp_scales: f64,
    pub mse_hp_values: f64,
}

pub fn ablation_report(x: &Tensor, config: &QuantConfig) -> Result<AblationReport> {
    let base = QuantConfig {
        sim_hp_scales: false,
        sim_hp_values: false,
        threshold: None,
        ..config.clone()
    };
    let run = |cfg: &QuantConfig| -> Result<f64> { mse(x, &quantize_tensor_simulated(x, cfg)?) };
    Ok(AblationReport {
        mean_square: x.mean_square(),
        mse_full: run(&base)?,
        mse_hp_scales: run(&base.clone().with_hp_scales())?,
        mse_hp_values: run(&base.clone().with_hp_values())?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub x: f64,
    pub mse: f64,
}

/// The default grid `0, 0.5, ..., 6`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=12).map(|i| i as f64 * 0.5).collect()
}

/// MSE when only values with scaled magnitude `<= x` are cast, baseline NVFP4.
pub fn threshold_sweep(x: &Tensor, thresholds: &[f64]) -> Result<Vec<SweepPoint>> {
    threshold_sweep_with(x, thresholds, &QuantConfig::nvfp4())
}

pub fn threshold_sweep_with(
    x: &Tensor,
    thresholds: &[f64],
    config: &QuantConfig,
) -> Result<Vec<SweepPoint>> {
    thresholds
        .iter()
        .map(|&t| {
            let cfg = QuantConfig {
                threshold: Some(t),
                ..config.clone()
            };
            Ok(SweepPoint {
                x: t,
                mse: mse(x, &quantize_tensor_simulated(x, &cfg)?)?,
            })
        })
        .collect()
}

/// Reconstruction MSE of one tensor under each format variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FormatComparison {
    pub mxfp4: f64,
    pub nvfp4_fixed6: f64,
    pub nvfp4_fixed6_cap256: f64,
    pub nvfp4_fixed4: f64,
    pub nvfp4_adaptive_mse: f64,
    /// Fraction of blocks the adaptive variant scaled to 4.
    pub adaptive_fraction_4: f64,
}

fn records_mse(records: &[BlockRecord], numel: usize) -> f64 {
    if numel == 0 {
        return 0.0;
    }
    records.iter().map(|r| r.metrics.sum_sq).sum::<f64>() / numel as f64
}

/// Compares MXFP4 with the NVFP4 scale modes.
///
/// `tensor_scale` overrides the NVFP4 tensor scale; the 4 and adaptive variants
/// use the 256 cap. MSEs come from the per-block metrics, so adaptive never
/// exceeds the cap-256 fixed-6 variant.
pub fn compare_formats(x: &Tensor, tensor_scale: Option<f32>) -> Result<FormatComparison> {
    let with_alpha = |c: QuantConfig| QuantConfig { tensor_scale, ..c };
    let run = |cfg: &QuantConfig| -> Result<(f64, Vec<BlockRecord>)> {
        let (_, recs) = quantize_tensor_detailed(x, cfg)?;
        Ok((records_mse(&recs, x.numel()), recs))
    };
    let (mxfp4, _) = run(&QuantConfig::mxfp4())?;
    let (fixed6, _) = run(&with_alpha(QuantConfig::nvfp4()))?;
    let (fixed6_256, _) = run(&with_alpha(QuantConfig::nvfp4().with_fp8_cap(FP8_CAP_ADAPTIVE)))?;
    let (fixed4, _) = run(&with_alpha(
        QuantConfig::nvfp4()
            .with_scale_mode(ScaleMode::Fixed4)
            .with_fp8_cap(FP8_CAP_ADAPTIVE),
    ))?;
    let (adaptive, recs) = run(&with_alpha(QuantConfig::adaptive(SelectionRule::Mse)))?;
    let fraction_4 = if recs.is_empty() {
        0.0
    } else {
        recs.iter().filter(|r| r.chosen_m == 4).count() as f64 / recs.len() as f64
    };
    Ok(FormatComparison {
        mxfp4,
        nvfp4_fixed6: fixed6,
        nvfp4_fixed6_cap256: fixed6_256,
        nvfp4_fixed4: fixed4,
        nvfp4_adaptive_mse: adaptive,
        adaptive_fraction_4: fraction_4,
    })
}
