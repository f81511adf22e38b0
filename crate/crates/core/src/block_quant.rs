//! Block-scaled FP4 quantization: tensor scale, per-block scales, value casting,
//! dequantization and per-block error metrics.
//!
//! Blocks run along the last (contiguous) dimension. A row whose length is not a
//! multiple of the block size ends in a short block; its missing positions are
//! treated as zero padding and take no part in scale or error computation.

use rayon::iter::Either;
use rayon::prelude::*;
use serde::Serialize;

use crate::codecs::{
    decode_fp4, encode_fp8_e4m3, encode_fp8_e8m0, Fp4Code, Fp8E4M3, Fp8E8M0, FP4_MAX,
};
use crate::config::{Format, QuantConfig, Rounding, ScaleMode, SelectionRule, MXFP4_BLOCK};
use crate::error::{Error, Result};
use crate::rng::{ValueRounding, DOMAIN_BLOCK};
use crate::tensor::Tensor;

/// MXFP4 maps a block maximum into `[4, 8)` before the saturating cast (`2^emax` of E2M1).
const MXFP4_POW2_TARGET: f64 = 4.0;

/// A decoded-on-demand block scale code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScaleCode {
    E4M3(Fp8E4M3),
    E8M0(Fp8E8M0),
}

impl ScaleCode {
    pub fn from_bits(format: Format, bits: u8) -> Self {
        match format {
            Format::Nvfp4 => ScaleCode::E4M3(Fp8E4M3::from_bits(bits)),
            Format::Mxfp4 => ScaleCode::E8M0(Fp8E8M0::from_bits(bits)),
        }
    }

    pub fn bits(self) -> u8 {
        match self {
            ScaleCode::E4M3(c) => c.bits(),
            ScaleCode::E8M0(c) => c.bits(),
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            ScaleCode::E4M3(c) => c.to_f64(),
            ScaleCode::E8M0(c) => c.to_f64(),
        }
    }
}

impl Default for ScaleCode {
    fn default() -> Self {
        ScaleCode::E4M3(Fp8E4M3::MIN_POSITIVE)
    }
}

/// Reconstruction error of one block (or any group of values).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ErrorMetrics {
    pub sum_sq: f64,
    pub sum_abs: f64,
    pub max_abs: f64,
    pub count: usize,
}

impl ErrorMetrics {
    #[inline]
    fn push(&mut self, err: f64) {
        let a = err.abs();
        self.sum_sq += err * err;
        self.sum_abs += a;
        if a > self.max_abs {
            self.max_abs = a;
        }
        self.count += 1;
    }

    /// Builds metrics from errors summed in sorted order, independent of element order.
    fn from_unordered(errors: &mut [f64]) -> Self {
        errors.sort_unstable_by(|a, b| a.abs().total_cmp(&b.abs()));
        let mut m = ErrorMetrics::default();
        for &e in errors.iter() {
            m.push(e);
        }
        m
    }

    pub fn mse(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum_sq / self.count as f64
        }
    }

    /// L1 norm of the errors.
    pub fn l1(&self) -> f64 {
        self.sum_abs
    }

    pub fn max(&self) -> f64 {
        self.max_abs
    }

    /// The quantity a selection rule minimises.
    pub fn score(&self, rule: SelectionRule) -> f64 {
        match rule {
            SelectionRule::Mse => self.mse(),
            SelectionRule::L1 => self.l1(),
            SelectionRule::AbsMax => self.max(),
        }
    }

    pub fn merge(&mut self, other: &ErrorMetrics) {
        self.sum_sq += other.sum_sq;
        self.sum_abs += other.sum_abs;
        self.max_abs = self.max_abs.max(other.max_abs);
        self.count += other.count;
    }
}

/// One block's codes, chosen scale and error metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockQuantResult {
    codes: [Fp4Code; MXFP4_BLOCK],
    len: usize,
    pub scale: ScaleCode,
    /// Block-maximum target actually used: 4 or 6.
    pub chosen_m: u8,
    pub err_mse: f64,
    pub err_l1: f64,
    pub err_max: f64,
}

impl BlockQuantResult {
    pub fn codes(&self) -> &[Fp4Code] {
        &self.codes[..self.len]
    }

    /// Decoded FP4 values (before applying any scale).
    pub fn values(&self) -> Vec<f64> {
        self.codes().iter().map(|&c| decode_fp4(c)).collect()
    }

    pub fn scale_value(&self) -> f64 {
        self.scale.to_f64()
    }

    pub(crate) fn from_parts(codes: [Fp4Code; MXFP4_BLOCK], len: usize, rec: &BlockRecord) -> Self {
        BlockQuantResult {
            codes,
            len,
            scale: rec.scale,
            chosen_m: rec.chosen_m,
            err_mse: rec.metrics.mse(),
            err_l1: rec.metrics.l1(),
            err_max: rec.metrics.max(),
        }
    }

    pub fn metrics(&self) -> ErrorMetrics {
        ErrorMetrics {
            sum_sq: self.err_mse * self.len as f64,
            sum_abs: self.err_l1,
            max_abs: self.err_max,
            count: self.len,
        }
    }
}

/// Per-block summary produced by tensor-level quantization.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BlockRecord {
    pub scale: ScaleCode,
    pub chosen_m: u8,
    pub metrics: ErrorMetrics,
    /// Metrics of the `[M=6, M=4]` candidates when both were evaluated.
    pub candidates: Option<[ErrorMetrics; 2]>,
}

/// Packed FP4 container: shape, per-block 8-bit scales and a tensor-wide scale.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    shape: Vec<usize>,
    format: Format,
    tensor_scale: f32,
    block_scales: Vec<u8>,
    /// Two codes per byte, low nibble first.
    codes: Vec<u8>,
}

impl QuantizedTensor {
    pub fn new(
        shape: Vec<usize>,
        format: Format,
        tensor_scale: f32,
        block_scales: Vec<u8>,
        packed_codes: Vec<u8>,
    ) -> Result<Self> {
        let expected = Self::expected_blocks(&shape, format);
        if block_scales.len() != expected {
            return Err(Error::ScaleCountMismatch {
                expected,
                found: block_scales.len(),
            });
        }
        let numel: usize = shape.iter().product();
        let code_bytes = numel.div_ceil(2);
        if packed_codes.len() != code_bytes {
            return Err(Error::ShapeMismatch(format!(
                "{numel} elements need {code_bytes} code bytes, got {}",
                packed_codes.len()
            )));
        }
        Ok(QuantizedTensor {
            shape,
            format,
            tensor_scale,
            block_scales,
            codes: packed_codes,
        })
    }

    /// Packs unpacked codes (one per element, row-major).
    pub fn from_codes(
        shape: Vec<usize>,
        format: Format,
        tensor_scale: f32,
        block_scales: Vec<u8>,
        codes: &[Fp4Code],
    ) -> Result<Self> {
        let packed = codes
            .chunks(2)
            .map(|pair| {
                let lo = pair[0].bits();
                let hi = pair.get(1).map_or(0, |c| c.bits());
                lo | (hi << 4)
            })
            .collect();
        Self::new(shape, format, tensor_scale, block_scales, packed)
    }

    /// Number of block scales a tensor of `shape` carries.
    pub fn expected_blocks(shape: &[usize], format: Format) -> usize {
        let last = shape.last().copied().unwrap_or(1);
        if last == 0 {
            return 0;
        }
        let numel: usize = shape.iter().product();
        (numel / last) * last.div_ceil(format.block_size())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn format(&self) -> Format {
        self.format
    }

    pub fn tensor_scale(&self) -> f32 {
        self.tensor_scale
    }

    pub fn block_scales(&self) -> &[u8] {
        &self.block_scales
    }

    pub fn packed_codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn num_blocks(&self) -> usize {
        self.block_scales.len()
    }

    pub fn block_scale(&self, block: usize) -> ScaleCode {
        ScaleCode::from_bits(self.format, self.block_scales[block])
    }

    pub fn code(&self, index: usize) -> Fp4Code {
        let byte = self.codes[index / 2];
        Fp4Code::from_bits(if index.is_multiple_of(2) { byte } else { byte >> 4 })
    }

    pub fn unpack_codes(&self) -> Vec<Fp4Code> {
        (0..self.numel()).map(|i| self.code(i)).collect()
    }
}

/// Tensor scale `max|X| / (m_fp4 * fp8_cap)`, rounded to `f32`; 1 for an all-zero tensor.
pub fn compute_tensor_scale(x: &[f32], m_fp4: f64, fp8_cap: f64) -> Result<f32> {
    let amax = checked_amax(x)?;
    if amax == 0.0 {
        return Ok(1.0);
    }
    let alpha = (amax / (m_fp4 * fp8_cap)) as f32;
    // A tensor this small underflows f32; keep the scale positive.
    Ok(if alpha > 0.0 { alpha } else { f32::from_bits(1) })
}

/// E4M3 block scale `max|block| / (alpha * m)`.
///
/// Blocks whose scale would round to zero (including all-zero blocks) get the
/// smallest positive E4M3 value instead, so dequantization never divides by zero.
pub fn compute_block_scale(block: &[f32], alpha: f32, m: f64) -> Result<Fp8E4M3> {
    let amax = checked_amax(block)?;
    Ok(nvfp4_scale(amax, alpha, m))
}

fn checked_amax(x: &[f32]) -> Result<f64> {
    let mut amax = 0.0f32;
    for &v in x {
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite value {v}")));
        }
        amax = amax.max(v.abs());
    }
    Ok(amax as f64)
}

#[inline]
fn group_amax(x: &[f32]) -> f64 {
    x.iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64
}

#[inline]
fn nvfp4_scale(amax: f64, alpha: f32, m: f64) -> Fp8E4M3 {
    let code = encode_fp8_e4m3(amax / (alpha as f64 * m));
    if code.bits() == 0 {
        Fp8E4M3::MIN_POSITIVE
    } else {
        code
    }
}

/// Quantizes one NVFP4 block (at most 32 values) with its maximum scaled onto `m`.
///
/// Values are divided by the decoded E4M3 scale, and the error metrics compare the
/// dequantized reconstruction `fp4 * scale * alpha` against the inputs.
pub fn quantize_block(
    block: &[f32],
    alpha: f32,
    m: f64,
    rounding: &mut ValueRounding,
) -> Result<BlockQuantResult> {
    if block.len() > MXFP4_BLOCK {
        return Err(Error::InvalidInput(format!(
            "block of {} values exceeds {MXFP4_BLOCK}",
            block.len()
        )));
    }
    if m != 4.0 && m != 6.0 {
        return Err(Error::InvalidInput(format!("block target must be 4 or 6, got {m}")));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidInput(format!("tensor scale must be positive, got {alpha}")));
    }
    checked_amax(block)?;
    let mut codes = [Fp4Code::ZERO; MXFP4_BLOCK];
    let (scale, delta) = candidate_scale(Format::Nvfp4, group_amax(block), alpha, m, false);
    let metrics = cast_group(
        block,
        alpha as f64 * delta,
        rounding,
        &CastOptions::default(),
        &mut codes[..block.len()],
        None,
        false,
    )?;
    Ok(BlockQuantResult {
        codes,
        len: block.len(),
        scale,
        chosen_m: m as u8,
        err_mse: metrics.mse(),
        err_l1: metrics.l1(),
        err_max: metrics.max(),
    })
}

// ---------------------------------------------------------------------------
// Group engine shared by 1D blocks, adaptive selection and 2D tiles.

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CastOptions {
    pub hp_scales: bool,
    pub hp_values: bool,
    pub threshold: Option<f64>,
}

impl CastOptions {
    pub(crate) fn from_config(config: &QuantConfig) -> Self {
        CastOptions {
            hp_scales: config.sim_hp_scales,
            hp_values: config.sim_hp_values,
            threshold: config.threshold,
        }
    }
}

/// Scale code plus the scale value values are divided by.
///
/// With `hp_scales` the divisor is the unrounded scale; the code is still reported.
pub(crate) fn candidate_scale(
    format: Format,
    amax: f64,
    alpha: f32,
    m: f64,
    hp_scales: bool,
) -> (ScaleCode, f64) {
    match format {
        Format::Nvfp4 => {
            let code = nvfp4_scale(amax, alpha, m);
            let delta = if hp_scales && amax > 0.0 {
                amax / (alpha as f64 * m)
            } else {
                code.to_f64()
            };
            (ScaleCode::E4M3(code), delta)
        }
        Format::Mxfp4 => {
            let code = if amax > 0.0 {
                // amax > 0 is always a valid E8M0 input.
                encode_fp8_e8m0(amax / MXFP4_POW2_TARGET).unwrap_or(Fp8E8M0::MIN_POSITIVE)
            } else {
                Fp8E8M0::MIN_POSITIVE
            };
            let delta = if hp_scales && amax > 0.0 {
                amax / FP4_MAX
            } else {
                code.to_f64()
            };
            (ScaleCode::E8M0(code), delta)
        }
    }
}

/// Casts `values / step` to FP4 and measures the reconstruction error.
pub(crate) fn cast_group(
    values: &[f32],
    step: f64,
    rounding: &mut ValueRounding,
    opts: &CastOptions,
    codes: &mut [Fp4Code],
    mut recon: Option<&mut [f32]>,
    order_independent: bool,
) -> Result<ErrorMetrics> {
    let mut metrics = ErrorMetrics::default();
    let mut errors = Vec::new();
    if order_independent {
        errors.reserve_exact(values.len());
    }
    for (i, &v) in values.iter().enumerate() {
        let x = v as f64;
        let scaled = x / step;
        // Always draw, so stochastic streams stay aligned with element positions.
        let code = rounding.encode(scaled)?;
        let cast = match opts.threshold {
            Some(t) => scaled.abs().min(FP4_MAX) <= t,
            None => true,
        };
        let r = if !cast {
            x
        } else if opts.hp_values {
            scaled * step
        } else {
            decode_fp4(code) * step
        };
        codes[i] = code;
        if let Some(out) = recon.as_deref_mut() {
            out[i] = r as f32;
        }
        if order_independent {
            errors.push(r - x);
        } else {
            metrics.push(r - x);
        }
    }
    if order_independent {
        metrics = ErrorMetrics::from_unordered(&mut errors);
    }
    Ok(metrics)
}

/// Settings shared by every group of one quantization run.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GroupPlan {
    pub format: Format,
    pub mode: ScaleMode,
    pub rule: SelectionRule,
    pub rounding: Rounding,
    pub domain: u64,
    pub opts: CastOptions,
    pub alpha: f32,
    /// Sum errors in an element-order independent way (used by 2D tiles).
    pub order_independent: bool,
}

impl GroupPlan {
    pub(crate) fn from_config(config: &QuantConfig, alpha: f32) -> Self {
        GroupPlan {
            format: config.format,
            mode: config.scale_mode,
            rule: config.selection_rule,
            rounding: config.rounding,
            domain: DOMAIN_BLOCK,
            opts: CastOptions::from_config(config),
            alpha,
            order_independent: false,
        }
    }

    fn cast_candidate(
        &self,
        values: &[f32],
        amax: f64,
        index: u64,
        m: f64,
        codes: &mut [Fp4Code],
        recon: Option<&mut [f32]>,
    ) -> Result<(ScaleCode, ErrorMetrics)> {
        let (scale, delta) = candidate_scale(self.format, amax, self.alpha, m, self.opts.hp_scales);
        let mut rounding = ValueRounding::for_group(self.rounding, self.domain, index, m as u8);
        let metrics = cast_group(
            values,
            self.alpha as f64 * delta,
            &mut rounding,
            &self.opts,
            codes,
            recon,
            self.order_independent,
        )?;
        Ok((scale, metrics))
    }

    /// Quantizes one group of at most `N` values into `codes` (and `recon`).
    pub(crate) fn quantize_group<const N: usize>(
        &self,
        values: &[f32],
        index: u64,
        codes: &mut [Fp4Code],
        mut recon: Option<&mut [f32]>,
    ) -> Result<BlockRecord> {
        debug_assert!(values.len() <= N);
        let amax = group_amax(values);
        let fixed_target = match self.mode {
            ScaleMode::Fixed6 => Some(6.0),
            ScaleMode::Fixed4 => Some(4.0),
            ScaleMode::Adaptive46 => None,
        };
        if let Some(m) = fixed_target {
            let (scale, metrics) = self.cast_candidate(values, amax, index, m, codes, recon)?;
            return Ok(BlockRecord {
                scale,
                chosen_m: m as u8,
                metrics,
                candidates: None,
            });
        }

        let n = values.len();
        let (scale6, metrics6) =
            self.cast_candidate(values, amax, index, 6.0, codes, recon.as_deref_mut())?;
        let mut codes4 = [Fp4Code::ZERO; N];
        let mut recon4 = [0.0f32; N];
        let want_recon = recon.is_some();
        let (scale4, metrics4) = self.cast_candidate(
            values,
            amax,
            index,
            4.0,
            &mut codes4[..n],
            want_recon.then_some(&mut recon4[..n]),
        )?;
        // Strict comparison: ties keep the 6 candidate.
        let pick4 = metrics4.score(self.rule) < metrics6.score(self.rule);
        if pick4 {
            codes[..n].copy_from_slice(&codes4[..n]);
            if let Some(out) = recon {
                out[..n].copy_from_slice(&recon4[..n]);
            }
        }
        let (scale, chosen_m, metrics) = if pick4 {
            (scale4, 4, metrics4)
        } else {
            (scale6, 6, metrics6)
        };
        Ok(BlockRecord {
            scale,
            chosen_m,
            metrics,
            candidates: Some([metrics6, metrics4]),
        })
    }
}

// ---------------------------------------------------------------------------
// Tensor driver.

pub(crate) struct TensorRun {
    pub container: QuantizedTensor,
    pub blocks: Vec<BlockRecord>,
    pub recon: Option<Vec<f32>>,
}

/// Tensor scale a config applies to `x`.
pub fn resolve_tensor_scale(x: &Tensor, config: &QuantConfig) -> Result<f32> {
    if !x.is_finite() {
        return Err(Error::InvalidInput("tensor contains NaN or infinity".into()));
    }
    Ok(match (config.format, config.tensor_scale) {
        (Format::Mxfp4, _) => 1.0,
        (Format::Nvfp4, Some(alpha)) => alpha,
        (Format::Nvfp4, None) => compute_tensor_scale(x.data(), FP4_MAX, config.fp8_cap)?,
    })
}

pub(crate) fn run_tensor(
    x: &Tensor,
    config: &QuantConfig,
    want_recon: bool,
    want_blocks: bool,
) -> Result<TensorRun> {
    config.validate()?;
    let alpha = resolve_tensor_scale(x, config)?;
    let plan = GroupPlan::from_config(config, alpha);
    let bs = config.format.block_size();
    let numel = x.numel();
    let last = x.last_dim();
    let nblocks = QuantizedTensor::expected_blocks(x.shape(), config.format);

    let mut codes = vec![Fp4Code::ZERO; numel];
    let mut scales = vec![0u8; nblocks];
    let mut blocks = vec![BlockRecord::default(); if want_blocks { nblocks } else { 0 }];
    let mut recon = want_recon.then(|| vec![0.0f32; numel]);

    if numel > 0 {
        // Rows of whole blocks can be split block by block.
        let row_len = if last.is_multiple_of(bs) { bs } else { last };
        let per_row = row_len.div_ceil(bs);
        let nrows = numel / row_len;

        let recon_rows = match recon.as_mut() {
            Some(r) => Either::Left(r.par_chunks_mut(row_len).map(Some)),
            None => Either::Right((0..nrows).into_par_iter().map(|_| None)),
        };
        let block_rows = if want_blocks {
            Either::Left(blocks.par_chunks_mut(per_row).map(Some))
        } else {
            Either::Right((0..nrows).into_par_iter().map(|_| None))
        };

        x.data()
            .par_chunks(row_len)
            .zip(codes.par_chunks_mut(row_len))
            .zip(scales.par_chunks_mut(per_row))
            .zip(recon_rows)
            .zip(block_rows)
            .enumerate()
            .try_for_each(
                |(row, ((((values, codes), scales), mut recon), mut records))| -> Result<()> {
                    for (j, start) in (0..row_len).step_by(bs).enumerate() {
                        let end = (start + bs).min(row_len);
                        let index = (row * per_row + j) as u64;
                        let rec = plan.quantize_group::<MXFP4_BLOCK>(
                            &values[start..end],
                            index,
                            &mut codes[start..end],
                            recon.as_deref_mut().map(|r| &mut r[start..end]),
                        )?;
                        scales[j] = rec.scale.bits();
                        if let Some(out) = records.as_deref_mut() {
                            out[j] = rec;
                        }
                    }
                    Ok(())
                },
            )?;
    }

    let container =
        QuantizedTensor::from_codes(x.shape().to_vec(), config.format, alpha, scales, &codes)?;
    Ok(TensorRun {
        container,
        blocks,
        recon,
    })
}

/// Quantizes a tensor into the packed container described by `config`.
///
/// Simulation flags are ignored here; see [`quantize_tensor_simulated`].
pub fn quantize_tensor(x: &Tensor, config: &QuantConfig) -> Result<QuantizedTensor> {
    let config = strip_simulation(config);
    Ok(run_tensor(x, &config, false, false)?.container)
}

/// Like [`quantize_tensor`], also returning every block's record.
pub fn quantize_tensor_detailed(
    x: &Tensor,
    config: &QuantConfig,
) -> Result<(QuantizedTensor, Vec<BlockRecord>)> {
    let config = strip_simulation(config);
    let run = run_tensor(x, &config, false, true)?;
    Ok((run.container, run.blocks))
}

fn strip_simulation(config: &QuantConfig) -> QuantConfig {
    QuantConfig {
        sim_hp_scales: false,
        sim_hp_values: false,
        threshold: None,
        ..config.clone()
    }
}

/// Quantize-then-dequantize with the simulation flags honoured.
///
/// `sim_hp_scales` divides by unrounded block scales, `sim_hp_values` skips the
/// FP4 cast, and `threshold = t` casts only values whose scaled magnitude (capped
/// at 6) is at most `t`, passing the rest through unchanged.
pub fn quantize_tensor_simulated(x: &Tensor, config: &QuantConfig) -> Result<Tensor> {
    let run = run_tensor(x, config, true, false)?;
    let data = run.recon.unwrap_or_default();
    Tensor::new(x.shape().to_vec(), data)
}

/// `decode(code) * block_scale * tensor_scale` for every element.
pub fn dequantize_tensor(q: &QuantizedTensor) -> Result<Tensor> {
    let alpha = q.tensor_scale();
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Corrupt(format!("tensor scale {alpha}")));
    }
    let numel = q.numel();
    let mut out = vec![0.0f32; numel];
    if numel > 0 {
        let bs = q.format().block_size();
        let last = q.shape().last().copied().unwrap_or(1);
        let per_row = last.div_ceil(bs);
        out.par_chunks_mut(last)
            .enumerate()
            .try_for_each(|(row, out_row)| -> Result<()> {
                for (j, chunk) in out_row.chunks_mut(bs).enumerate() {
                    let b = row * per_row + j;
                    let delta = q.block_scale(b).to_f64();
                    if delta.is_nan() {
                        return Err(Error::Corrupt(format!("NaN scale in block {b}")));
                    }
                    let step = alpha as f64 * delta;
                    let base = row * last + j * bs;
                    for (k, o) in chunk.iter_mut().enumerate() {
                        *o = (decode_fp4(q.code(base + k)) * step) as f32;
                    }
                }
                Ok(())
            })?;
    }
    Tensor::new(q.shape().to_vec(), out)
}
