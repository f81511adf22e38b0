//! Adaptive 4-or-6 block scaling.
//!
//! Every block is quantized twice, once with its maximum scaled onto 6 and once onto
//! 4, and the candidate with the smaller error under the selection rule is kept
//! (ties keep 6). The result is an ordinary NVFP4 container: the choice lives
//! entirely in the block scale value. The tensor scale uses a cap of 256 so that the
//! largest block can still take the 4 candidate, whose scale `256 * 6/4 = 384` is
//! exact in E4M3.

use serde::Serialize;

use crate::block_quant::{
    quantize_tensor, quantize_tensor_detailed, BlockQuantResult, BlockRecord, CastOptions,
    GroupPlan, QuantizedTensor,
};
use crate::codecs::Fp4Code;
use crate::config::{Format, QuantConfig, Rounding, ScaleMode, SelectionRule, MXFP4_BLOCK};
use crate::error::{Error, Result};
use crate::rng::DOMAIN_BLOCK;
use crate::tensor::Tensor;

/// Quantizes one block under both candidates and keeps the better one.
///
/// `block_index` keys the stochastic substreams; it is irrelevant for nearest rounding.
pub fn quantize_block_adaptive(
    block: &[f32],
    alpha: f32,
    rule: SelectionRule,
    rounding: Rounding,
    block_index: u64,
) -> Result<BlockQuantResult> {
    if block.len() > MXFP4_BLOCK {
        return Err(Error::InvalidInput(format!(
            "block of {} values exceeds {MXFP4_BLOCK}",
            block.len()
        )));
    }
    if block.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("block contains NaN or infinity".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidInput(format!("tensor scale must be positive, got {alpha}")));
    }
    let plan = GroupPlan {
        format: Format::Nvfp4,
        mode: ScaleMode::Adaptive46,
        rule,
        rounding,
        domain: DOMAIN_BLOCK,
        opts: CastOptions::default(),
        alpha,
        order_independent: false,
    };
    let mut codes = [Fp4Code::ZERO; MXFP4_BLOCK];
    let rec = plan.quantize_group::<MXFP4_BLOCK>(block, block_index, &mut codes[..block.len()], None)?;
    Ok(BlockQuantResult::from_parts(codes, block.len(), &rec))
}

/// Adaptive quantization of a whole tensor; `config.scale_mode` must be adaptive.
pub fn quantize_tensor_adaptive(x: &Tensor, config: &QuantConfig) -> Result<QuantizedTensor> {
    if config.scale_mode != ScaleMode::Adaptive46 {
        return Err(Error::InvalidConfig(format!(
            "expected adaptive scale mode, got {:?}",
            config.scale_mode
        )));
    }
    quantize_tensor(x, config)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PerRule<T> {
    pub mse: T,
    pub l1: T,
    pub absmax: T,
}

impl<T: Copy> PerRule<T> {
    pub fn get(&self, rule: SelectionRule) -> T {
        match rule {
            SelectionRule::Mse => self.mse,
            SelectionRule::L1 => self.l1,
            SelectionRule::AbsMax => self.absmax,
        }
    }

    fn get_mut(&mut self, rule: SelectionRule) -> &mut T {
        match rule {
            SelectionRule::Mse => &mut self.mse,
            SelectionRule::L1 => &mut self.l1,
            SelectionRule::AbsMax => &mut self.absmax,
        }
    }
}

/// How often blocks pick the 4 candidate, and how much the rules disagree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionStats {
    pub blocks: usize,
    pub rule: SelectionRule,
    /// Fraction of blocks choosing M=4 under `rule`.
    pub fraction_4: f64,
    pub chosen_4_by_rule: PerRule<usize>,
    pub disagree_mse_l1: usize,
    pub disagree_mse_absmax: usize,
    pub disagree_l1_absmax: usize,
    /// Per-element reconstruction MSE of the tensor under each rule.
    pub mse_by_rule: PerRule<f64>,
    pub mse_all_6: f64,
    pub mse_all_4: f64,
}

/// Selection statistics for `x` under adaptive scaling with `config`'s rounding and rule.
pub fn selection_stats(x: &Tensor, config: &QuantConfig) -> Result<SelectionStats> {
    let config = config.clone().with_scale_mode(ScaleMode::Adaptive46);
    let (_, records) = quantize_tensor_detailed(x, &config)?;
    Ok(stats_from_records(&records, x.numel(), config.selection_rule))
}

pub(crate) fn stats_from_records(
    records: &[BlockRecord],
    numel: usize,
    rule: SelectionRule,
) -> SelectionStats {
    let mut chosen = PerRule::<usize>::default();
    let mut sum_sq = PerRule::<f64>::default();
    let (mut d_ml, mut d_ma, mut d_la) = (0, 0, 0);
    let (mut all6, mut all4) = (0.0, 0.0);
    for rec in records {
        let [m6, m4] = rec.candidates.unwrap_or([rec.metrics, rec.metrics]);
        all6 += m6.sum_sq;
        all4 += m4.sum_sq;
        let picks = SelectionRule::ALL.map(|r| m4.score(r) < m6.score(r));
        for (r, &pick4) in SelectionRule::ALL.iter().zip(&picks) {
            if pick4 {
                *chosen.get_mut(*r) += 1;
            }
            *sum_sq.get_mut(*r) += if pick4 { m4.sum_sq } else { m6.sum_sq };
        }
        d_ml += (picks[0] != picks[1]) as usize;
        d_ma += (picks[0] != picks[2]) as usize;
        d_la += (picks[1] != picks[2]) as usize;
    }
    let n = numel.max(1) as f64;
    let blocks = records.len();
    SelectionStats {
        blocks,
        rule,
        fraction_4: if blocks == 0 {
            0.0
        } else {
            chosen.get(rule) as f64 / blocks as f64
        },
        chosen_4_by_rule: chosen,
        disagree_mse_l1: d_ml,
        disagree_mse_absmax: d_ma,
        disagree_l1_absmax: d_la,
        mse_by_rule: PerRule {
            mse: sum_sq.mse / n,
            l1: sum_sq.l1 / n,
            absmax: sum_sq.absmax / n,
        },
        mse_all_6: all6 / n,
        mse_all_4: all4 / n,
    }
}
