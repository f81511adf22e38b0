use serde::Serialize;

use crate::error::{Error, Result};

/// Element block size for NVFP4.
pub const NVFP4_BLOCK: usize = 16;
/// Element block size for MXFP4.
pub const MXFP4_BLOCK: usize = 32;

/// Tensor-scale cap used by the baseline recipe (largest E4M3 value).
pub const FP8_CAP_DEFAULT: f64 = 448.0;
/// Tensor-scale cap used with adaptive 4-or-6 scaling; `256 * 6 / 4 = 384` is exact in E4M3.
pub const FP8_CAP_ADAPTIVE: f64 = 256.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// E2M1 values, 16-value blocks, E4M3 block scales, FP32 tensor scale.
    Nvfp4,
    /// E2M1 values, 32-value blocks, E8M0 block scales, no tensor scale.
    Mxfp4,
}

impl Format {
    pub fn block_size(self) -> usize {
        match self {
            Format::Nvfp4 => NVFP4_BLOCK,
            Format::Mxfp4 => MXFP4_BLOCK,
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            Format::Nvfp4 => 0,
            Format::Mxfp4 => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Format::Nvfp4),
            1 => Ok(Format::Mxfp4),
            other => Err(Error::UnsupportedFormat(other)),
        }
    }
}

/// Which FP4 value a block's maximum is scaled onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ScaleMode {
    Fixed6,
    Fixed4,
    /// Quantize under both 6 and 4 and keep the one with less error.
    Adaptive46,
}

/// Error measure used to choose between the 4 and 6 candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionRule {
    Mse,
    L1,
    AbsMax,
}

impl SelectionRule {
    pub const ALL: [SelectionRule; 3] = [SelectionRule::Mse, SelectionRule::L1, SelectionRule::AbsMax];

    pub fn name(self) -> &'static str {
        match self {
            SelectionRule::Mse => "mse",
            SelectionRule::L1 => "l1",
            SelectionRule::AbsMax => "absmax",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Rounding {
    NearestEven,
    /// Stochastic rounding; every block draws from its own substream of `seed`.
    Stochastic { seed: u64 },
}

/// Full description of one quantization run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantConfig {
    pub format: Format,
    pub scale_mode: ScaleMode,
    pub selection_rule: SelectionRule,
    pub rounding: Rounding,
    /// `M^FP8` in the tensor-scale formula: 448 or 256.
    pub fp8_cap: f64,
    /// Keep block scales unrounded (simulation only).
    pub sim_hp_scales: bool,
    /// Keep scaled values uncast (simulation only).
    pub sim_hp_values: bool,
    /// Only values whose scaled magnitude is `<= threshold` are cast (simulation only).
    pub threshold: Option<f64>,
    /// Replaces the computed tensor scale.
    pub tensor_scale: Option<f32>,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig::nvfp4()
    }
}

impl QuantConfig {
    /// Baseline NVFP4: scale to 6, cap 448, round-to-nearest-even.
    pub fn nvfp4() -> Self {
        QuantConfig {
            format: Format::Nvfp4,
            scale_mode: ScaleMode::Fixed6,
            selection_rule: SelectionRule::Mse,
            rounding: Rounding::NearestEven,
            fp8_cap: FP8_CAP_DEFAULT,
            sim_hp_scales: false,
            sim_hp_values: false,
            threshold: None,
            tensor_scale: None,
        }
    }

    /// NVFP4 with adaptive 4-or-6 block scaling and the 256 cap.
    pub fn adaptive(rule: SelectionRule) -> Self {
        QuantConfig {
            scale_mode: ScaleMode::Adaptive46,
            selection_rule: rule,
            fp8_cap: FP8_CAP_ADAPTIVE,
            ..QuantConfig::nvfp4()
        }
    }

    pub fn mxfp4() -> Self {
        QuantConfig {
            format: Format::Mxfp4,
            ..QuantConfig::nvfp4()
        }
    }

    /// Sets the scale mode; switching to adaptive also switches the cap to 256.
    pub fn with_scale_mode(mut self, mode: ScaleMode) -> Self {
        self.scale_mode = mode;
        if mode == ScaleMode::Adaptive46 {
            self.fp8_cap = FP8_CAP_ADAPTIVE;
        }
        self
    }

    pub fn with_rule(mut self, rule: SelectionRule) -> Self {
        self.selection_rule = rule;
        self
    }

    pub fn with_rounding(mut self, rounding: Rounding) -> Self {
        self.rounding = rounding;
        self
    }

    pub fn with_fp8_cap(mut self, cap: f64) -> Self {
        self.fp8_cap = cap;
        self
    }

    pub fn with_tensor_scale(mut self, alpha: f32) -> Self {
        self.tensor_scale = Some(alpha);
        self
    }

    pub fn with_hp_scales(mut self) -> Self {
        self.sim_hp_scales = true;
        self
    }

    pub fn with_hp_values(mut self) -> Self {
        self.sim_hp_values = true;
        self
    }

    pub fn with_threshold(mut self, x: f64) -> Self {
        self.threshold = Some(x);
        self
    }

    /// True when any simulation flag is set.
    pub fn is_simulated(&self) -> bool {
        self.sim_hp_scales || self.sim_hp_values || self.threshold.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.fp8_cap != FP8_CAP_DEFAULT && self.fp8_cap != FP8_CAP_ADAPTIVE {
            return Err(Error::InvalidConfig(format!(
                "fp8_cap must be 448 or 256, got {}",
                self.fp8_cap
            )));
        }
        match (self.format, self.scale_mode) {
            (Format::Mxfp4, ScaleMode::Adaptive46) => {
                return Err(Error::InvalidConfig(
                    "adaptive 4/6 scaling needs NVFP4: E8M0 scales cannot express a 1.5x step"
                        .into(),
                ))
            }
            (Format::Mxfp4, ScaleMode::Fixed4) => {
                return Err(Error::InvalidConfig(
                    "MXFP4 scales are powers of two; only the default scale mode applies".into(),
                ))
            }
            (Format::Nvfp4, ScaleMode::Adaptive46) if self.fp8_cap != FP8_CAP_ADAPTIVE => {
                return Err(Error::InvalidConfig(
                    "adaptive 4/6 scaling requires fp8_cap = 256".into(),
                ))
            }
            _ => {}
        }
        if self.sim_hp_scales && self.sim_hp_values {
            return Err(Error::InvalidConfig(
                "set at most one of sim_hp_scales and sim_hp_values".into(),
            ));
        }
        if let Some(x) = self.threshold {
            if !(0.0..=6.0).contains(&x) {
                return Err(Error::InvalidInput(format!(
                    "threshold must lie in [0, 6], got {x}"
                )));
            }
        }
        if let Some(alpha) = self.tensor_scale {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "tensor scale must be finite and positive, got {alpha}"
                )));
            }
            if self.format == Format::Mxfp4 && alpha != 1.0 {
                return Err(Error::InvalidConfig(
                    "MXFP4 has no tensor scale; only 1.0 is accepted".into(),
                ));
            }
        }
        Ok(())
    }
}
