//! Random Hadamard transform and 2D (tile-shared scale) weight quantization.

use rand::Rng;
use rayon::prelude::*;

use crate::block_quant::{resolve_tensor_scale, GroupPlan, QuantizedTensor};
use crate::codecs::Fp4Code;
use crate::config::{Format, QuantConfig, NVFP4_BLOCK};
use crate::error::{Error, Result};
use crate::rng::{substream, DOMAIN_RHT, DOMAIN_TILE};
use crate::tensor::Tensor;

/// Side length of a 2D weight tile.
pub const TILE: usize = NVFP4_BLOCK;

/// A random Hadamard transform of a fixed power-of-two size.
#[derive(Debug, Clone, PartialEq)]
pub struct RhtSpec {
    size: usize,
    seed: u64,
    signs: Vec<f32>,
}

impl RhtSpec {
    /// Draws the ±1 sign diagonal from `seed`.
    pub fn new(size: usize, seed: u64) -> Result<Self> {
        check_size(size)?;
        let mut rng = substream(seed, DOMAIN_RHT, size as u64, 0);
        let signs = (0..size)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Ok(RhtSpec { size, seed, signs })
    }

    /// A transform with an explicit sign diagonal.
    pub fn with_signs(signs: Vec<f32>) -> Result<Self> {
        check_size(signs.len())?;
        if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::InvalidInput("RHT signs must be +1 or -1".into()));
        }
        Ok(RhtSpec {
            size: signs.len(),
            seed: 0,
            signs,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn signs(&self) -> &[f32] {
        &self.signs
    }
}

fn check_size(size: usize) -> Result<()> {
    if size == 0 || !size.is_power_of_two() {
        return Err(Error::InvalidInput(format!(
            "RHT size must be a power of two, got {size}"
        )));
    }
    Ok(())
}

/// In-place unnormalised Walsh-Hadamard transform (Sylvester ordering).
fn fwht(buf: &mut [f64]) {
    let n = buf.len();
    let mut h = 1;
    while h < n {
        for start in (0..n).step_by(2 * h) {
            for i in start..start + h {
                let (a, b) = (buf[i], buf[i + h]);
                buf[i] = a + b;
                buf[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

fn check_divisible(x: &Tensor, spec: &RhtSpec) -> Result<()> {
    if !x.last_dim().is_multiple_of(spec.size) {
        return Err(Error::ShapeMismatch(format!(
            "last dimension {} is not a multiple of the RHT size {}",
            x.last_dim(),
            spec.size
        )));
    }
    Ok(())
}

/// Applies `H diag(signs) / sqrt(n)` to every group of `n` values along the last dimension.
pub fn apply_rht(x: &Tensor, spec: &RhtSpec) -> Result<Tensor> {
    check_divisible(x, spec)?;
    let n = spec.size;
    let norm = 1.0 / (n as f64).sqrt();
    let mut out = x.clone();
    out.data_mut().par_chunks_mut(n).for_each(|group| {
        let mut buf = [0.0f64; 64];
        let mut heap;
        let buf: &mut [f64] = if n <= 64 {
            &mut buf[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        for ((b, &v), &s) in buf.iter_mut().zip(group.iter()).zip(&spec.signs) {
            *b = v as f64 * s as f64;
        }
        fwht(buf);
        for (g, &b) in group.iter_mut().zip(buf.iter()) {
            *g = (b * norm) as f32;
        }
    });
    Ok(out)
}

/// Inverse of [`apply_rht`]: `diag(signs) H^T / sqrt(n)`.
pub fn inverse_rht(x: &Tensor, spec: &RhtSpec) -> Result<Tensor> {
    check_divisible(x, spec)?;
    let n = spec.size;
    let norm = 1.0 / (n as f64).sqrt();
    let mut out = x.clone();
    out.data_mut().par_chunks_mut(n).for_each(|group| {
        let mut buf: Vec<f64> = group.iter().map(|&v| v as f64).collect();
        fwht(&mut buf);
        for ((g, &b), &s) in group.iter_mut().zip(&buf).zip(&spec.signs) {
            *g = (b * norm * s as f64) as f32;
        }
    });
    Ok(out)
}

/// Quantizes a weight matrix with one E4M3 scale per 16x16 tile.
///
/// The tile scale is stored once for each of the tile's 16-value row blocks, so the
/// result is a standard NVFP4 container. Scale mode, selection and rounding act
/// per tile, and tile errors are accumulated independently of element order, so
/// quantizing `W^T` yields exactly the transpose of quantizing `W` (with
/// nearest rounding). Edge tiles are partial; missing positions are ignored.
pub fn quantize_weights_2d(w: &Tensor, config: &QuantConfig) -> Result<QuantizedTensor> {
    config.validate()?;
    if config.format != Format::Nvfp4 {
        return Err(Error::InvalidConfig("2D weight tiles are NVFP4 only".into()));
    }
    let (rows, cols) = w.dims2()?;
    let config = QuantConfig {
        sim_hp_scales: false,
        sim_hp_values: false,
        threshold: None,
        ..config.clone()
    };
    let alpha = resolve_tensor_scale(w, &config)?;
    let mut plan = GroupPlan::from_config(&config, alpha);
    plan.domain = DOMAIN_TILE;
    plan.order_independent = true;

    let per_row = cols.div_ceil(TILE);
    let mut codes = vec![Fp4Code::ZERO; rows * cols];
    let mut scales = vec![0u8; rows * per_row];
    if rows > 0 && cols > 0 {
        codes
            .par_chunks_mut(TILE * cols)
            .zip(scales.par_chunks_mut(TILE * per_row))
            .enumerate()
            .try_for_each(|(ti, (code_rows, scale_rows))| -> Result<()> {
                let r0 = ti * TILE;
                let tile_rows = (rows - r0).min(TILE);
                let mut values = [0.0f32; TILE * TILE];
                let mut tile_codes = [Fp4Code::ZERO; TILE * TILE];
                for tj in 0..per_row {
                    let c0 = tj * TILE;
                    let tile_cols = (cols - c0).min(TILE);
                    let n = tile_rows * tile_cols;
                    for i in 0..tile_rows {
                        let src = (r0 + i) * cols + c0;
                        values[i * tile_cols..(i + 1) * tile_cols]
                            .copy_from_slice(&w.data()[src..src + tile_cols]);
                    }
                    let index = (ti * per_row + tj) as u64;
                    let rec = plan.quantize_group::<{ TILE * TILE }>(
                        &values[..n],
                        index,
                        &mut tile_codes[..n],
                        None,
                    )?;
                    for i in 0..tile_rows {
                        code_rows[i * cols + c0..i * cols + c0 + tile_cols]
                            .copy_from_slice(&tile_codes[i * tile_cols..(i + 1) * tile_cols]);
                        scale_rows[i * per_row + tj] = rec.scale.bits();
                    }
                }
                Ok(())
            })?;
    }
    QuantizedTensor::from_codes(vec![rows, cols], Format::Nvfp4, alpha, scales, &codes)
}
