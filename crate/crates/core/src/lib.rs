//! Software emulation of NVFP4 and MXFP4 block-scaled quantization.
//!
//! The crate provides bit-exact FP4 (E2M1), FP8 (E4M3, E8M0) codecs, the baseline
//! NVFP4 pipeline, adaptive 4-or-6 block scaling, the random Hadamard transform
//! and 2D weight tiles used for training, an emulated quantized linear layer,
//! diagnostic analyses, and the on-disk tensor and container formats.

pub mod adaptive;
pub mod analysis;
pub mod block_quant;
pub mod codecs;
pub mod config;
pub mod error;
pub mod io;
pub mod qlinear;
pub mod rng;
pub mod tensor;
pub mod transforms;

pub use adaptive::{quantize_block_adaptive, quantize_tensor_adaptive, selection_stats, SelectionStats};
pub use block_quant::{
    compute_block_scale, compute_tensor_scale, dequantize_tensor, quantize_block, quantize_tensor,
    quantize_tensor_detailed, quantize_tensor_simulated, BlockQuantResult, BlockRecord,
    ErrorMetrics, QuantizedTensor, ScaleCode,
};
pub use codecs::{Fp4Code, Fp8E4M3, Fp8E8M0};
pub use config::{Format, QuantConfig, Rounding, ScaleMode, SelectionRule};
pub use error::{Error, Result};
pub use tensor::Tensor;
