//! Emulated NVFP4 linear layer: FPROP, DGRAD and WGRAD on quantized operands.
//!
//! * FPROP `y = x W^T`: `x` in 16-value row blocks, `W` in 16x16 tiles, nearest rounding.
//! * DGRAD `dx = dy W`: `dy` stochastically rounded, `W^T` from the same tiles.
//! * WGRAD `dW = dy^T x`: both operands get a random Hadamard transform along the
//!   batch (reduction) dimension, then stochastic rounding.
//!
//! Quantization is treated as identity for differentiation (straight-through), so
//! each path is the plain matmul evaluated on quantized operands. Every product
//! is accumulated in `f32`.

use half::bf16;
use rayon::prelude::*;

use crate::block_quant::{dequantize_tensor, quantize_tensor, QuantizedTensor};
use crate::config::{QuantConfig, Rounding, NVFP4_BLOCK};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tensor::Tensor;
use crate::transforms::{apply_rht, quantize_weights_2d, RhtSpec};

const PURPOSE_DGRAD_DY: u64 = 1;
const PURPOSE_WGRAD_DY: u64 = 2;
const PURPOSE_WGRAD_X: u64 = 3;
const PURPOSE_RHT: u64 = 4;

fn check_pair(a: &QuantizedTensor, b: &QuantizedTensor) -> Result<()> {
    if a.format() != b.format() {
        return Err(Error::InvalidInput(format!(
            "operand formats differ: {:?} vs {:?}",
            a.format(),
            b.format()
        )));
    }
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul needs matrices, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `A B^T` with `f32` accumulation, both operands `[_, K]` row-major.
fn matmul_nt_f32(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (n, kb) = b.dims2()?;
    if k != kb {
        return Err(Error::ShapeMismatch(format!("inner dimensions {k} and {kb} differ")));
    }
    let mut out = vec![0.0f32; m * n];
    if k > 0 && n > 0 {
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let ar = &a.data()[i * k..(i + 1) * k];
            for (j, o) in row.iter_mut().enumerate() {
                let br = &b.data()[j * k..(j + 1) * k];
                let mut acc = 0.0f32;
                for (&x, &y) in ar.iter().zip(br) {
                    acc += x * y;
                }
                *o = acc;
            }
        });
    }
    Tensor::new(vec![m, n], out)
}

/// `dequantize(A) @ dequantize(B)` for `A: [M, K]`, `B: [K, N]`, accumulated in `f32`.
pub fn emulated_fp4_matmul(a: &QuantizedTensor, b: &QuantizedTensor) -> Result<Tensor> {
    check_pair(a, b)?;
    let bt = dequantize_tensor(b)?.transpose()?;
    matmul_nt_f32(&dequantize_tensor(a)?, &bt)
}

/// `dequantize(A) @ dequantize(B)^T` for `A: [M, K]`, `B: [N, K]`.
///
/// This is the layout tensor cores consume: both operands blocked along `K`.
pub fn emulated_fp4_matmul_nt(a: &QuantizedTensor, b: &QuantizedTensor) -> Result<Tensor> {
    check_pair(a, b)?;
    matmul_nt_f32(&dequantize_tensor(a)?, &dequantize_tensor(b)?)
}

/// Rounds every element to bf16 (nearest even) and back.
pub fn round_to_bf16(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for v in out.data_mut() {
        *v = bf16::from_f32(*v).to_f32();
    }
    out
}

fn base_seed(config: &QuantConfig) -> u64 {
    match config.rounding {
        Rounding::Stochastic { seed } => seed,
        Rounding::NearestEven => 0,
    }
}

fn nearest(config: &QuantConfig) -> QuantConfig {
    config.clone().with_rounding(Rounding::NearestEven)
}

fn stochastic(config: &QuantConfig, purpose: u64) -> QuantConfig {
    let seed = derive_seed(base_seed(config), purpose);
    config.clone().with_rounding(Rounding::Stochastic { seed })
}

fn check_cols(what: &str, a: &Tensor, b: &Tensor, a_dim: usize, b_dim: usize) -> Result<()> {
    let (ad, bd) = (a.dims2()?, b.dims2()?);
    let av = if a_dim == 0 { ad.0 } else { ad.1 };
    let bv = if b_dim == 0 { bd.0 } else { bd.1 };
    if av != bv {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} and {:?} are incompatible",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// FPROP: `y = x W^T` for `x: [B, in]`, `W: [out, in]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, config: &QuantConfig) -> Result<Tensor> {
    check_cols("forward", x, w, 1, 1)?;
    let cfg = nearest(config);
    let xq = quantize_tensor(x, &cfg)?;
    let wq = quantize_weights_2d(w, &cfg)?;
    emulated_fp4_matmul_nt(&xq, &wq)
}

/// DGRAD: `dx = dy W` for `dy: [B, out]`, `W: [out, in]`.
pub fn linear_dgrad(dy: &Tensor, w: &Tensor, config: &QuantConfig) -> Result<Tensor> {
    check_cols("dgrad", dy, w, 1, 0)?;
    let dyq = quantize_tensor(dy, &stochastic(config, PURPOSE_DGRAD_DY))?;
    let wtq = quantize_weights_2d(&w.transpose()?, &nearest(config))?;
    emulated_fp4_matmul_nt(&dyq, &wtq)
}

/// Transposes `[B, d]` to `[d, B']` with the batch zero-padded to a multiple of 16.
fn transpose_padded(t: &Tensor) -> Result<Tensor> {
    let (b, d) = t.dims2()?;
    let bp = b.div_ceil(NVFP4_BLOCK) * NVFP4_BLOCK;
    let mut out = vec![0.0f32; d * bp];
    for i in 0..b {
        for j in 0..d {
            out[j * bp + i] = t.data()[i * d + j];
        }
    }
    Tensor::new(vec![d, bp], out)
}

/// WGRAD: `dW = dy^T x` for `dy: [B, out]`, `x: [B, in]`.
///
/// The shared Hadamard rotation along the batch dimension cancels in the product.
/// Zero padding of the batch to a multiple of 16 does not change it either.
pub fn linear_wgrad(dy: &Tensor, x: &Tensor, config: &QuantConfig) -> Result<Tensor> {
    check_cols("wgrad", dy, x, 0, 0)?;
    let rht = RhtSpec::new(NVFP4_BLOCK, derive_seed(base_seed(config), PURPOSE_RHT))?;
    let dyt = apply_rht(&transpose_padded(dy)?, &rht)?;
    let xt = apply_rht(&transpose_padded(x)?, &rht)?;
    let dyq = quantize_tensor(&dyt, &stochastic(config, PURPOSE_WGRAD_DY))?;
    let xq = quantize_tensor(&xt, &stochastic(config, PURPOSE_WGRAD_X))?;
    emulated_fp4_matmul_nt(&dyq, &xq)
}
