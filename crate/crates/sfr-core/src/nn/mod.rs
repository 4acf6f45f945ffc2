//! Precision-generic neural-network building blocks with explicit
//! forward/backward passes: 2-D convolution (im2col + GEMM), instance
//! normalization, leaky activation, and nearest-neighbor resampling.

pub mod conv;
pub mod norm;
pub mod ops;

pub use conv::{AdapterState, Conv2d};
pub use norm::InstanceNorm;
pub use ops::{upsample2x_backward, upsample2x_forward, LeakyRelu};

/// Identifies what a named parameter tensor is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    NormGain,
    NormBias,
    LoraA,
    LoraB,
}

impl ParamKind {
    /// Stable tag used in checkpoint manifests.
    pub fn tag(self) -> &'static str {
        match self {
            ParamKind::ConvWeight => "conv_weight",
            ParamKind::ConvBias => "conv_bias",
            ParamKind::NormGain => "norm_gain",
            ParamKind::NormBias => "norm_bias",
            ParamKind::LoraA => "lora_a",
            ParamKind::LoraB => "lora_b",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "conv_weight" => ParamKind::ConvWeight,
            "conv_bias" => ParamKind::ConvBias,
            "norm_gain" => ParamKind::NormGain,
            "norm_bias" => ParamKind::NormBias,
            "lora_a" => ParamKind::LoraA,
            "lora_b" => ParamKind::LoraB,
            _ => return None,
        })
    }

    /// True for the frozen-base parameter kinds (everything but LoRA).
    pub fn is_base(self) -> bool {
        !matches!(self, ParamKind::LoraA | ParamKind::LoraB)
    }
}
