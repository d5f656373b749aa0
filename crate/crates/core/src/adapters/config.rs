use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which attention projections receive adapters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetProjections {
    Qv,
    Qkv,
    Qkvo,
}

impl TargetProjections {
    pub fn includes(self, role: ProjectionRole) -> bool {
        use ProjectionRole::*;
        match self {
            TargetProjections::Qv => matches!(role, Query | Value),
            TargetProjections::Qkv => matches!(role, Query | Key | Value),
            TargetProjections::Qkvo => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionRole {
    Query,
    Key,
    Value,
    Output,
}

impl ProjectionRole {
    pub const ALL: [ProjectionRole; 4] = [Self::Query, Self::Key, Self::Value, Self::Output];

    pub fn short(self) -> &'static str {
        match self {
            Self::Query => "q",
            Self::Key => "k",
            Self::Value => "v",
            Self::Output => "o",
        }
    }
}

/// How the prompt term is combined with the context path output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    MeanAdd,
    CrossAttention,
    GateAttention,
}

/// Parallel (horizontal) or stacked (vertical) arrangement of the two branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combination {
    Horizontal,
    Vertical,
}

/// What the prompt branch reads: the full slot prompt or just the slot name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    SlotPrompt,
    SlotEmbedding,
}

/// Attention layers that receive prompt adapters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptScope {
    AllAttention,
    EncoderOnly,
}

macro_rules! impl_from_str {
    ($ty:ty, $($s:literal => $v:expr),+ $(,)?) => {
        impl std::str::FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    other => Err(Error::config(format!(
                        "unknown {} '{}'", stringify!($ty), other
                    ))),
                }
            }
        }
    };
}

impl_from_str!(TargetProjections, "qv" => Self::Qv, "qkv" => Self::Qkv, "qkvo" => Self::Qkvo);
impl_from_str!(FusionKind,
    "mean_add" => Self::MeanAdd,
    "cross_attention" => Self::CrossAttention,
    "gate_attention" => Self::GateAttention);
impl_from_str!(Combination, "horizontal" => Self::Horizontal, "vertical" => Self::Vertical);
impl_from_str!(PromptMode, "slot_prompt" => Self::SlotPrompt, "slot_embedding" => Self::SlotEmbedding);
impl_from_str!(PromptScope, "all_attention" => Self::AllAttention, "encoder_only" => Self::EncoderOnly);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualLoraConfig {
    pub rank: usize,
    pub target_projections: TargetProjections,
    pub fusion: FusionKind,
    pub combination: Combination,
    /// Attach the context branch (`W + BA`).
    pub context_lora: bool,
    /// Number of independent prompt branches; 0 disables the prompt branch.
    pub n_prompt_loras: usize,
    pub init_std: f64,
    pub seed: u64,
    pub prompt_input: PromptMode,
    pub prompt_scope: PromptScope,
    /// Multiplier on every low-rank product. The dual rule itself has none.
    pub scaling: f64,
}

impl Default for DualLoraConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            target_projections: TargetProjections::Qv,
            fusion: FusionKind::MeanAdd,
            combination: Combination::Horizontal,
            context_lora: true,
            n_prompt_loras: 1,
            init_std: 0.02,
            seed: 0,
            prompt_input: PromptMode::SlotPrompt,
            prompt_scope: PromptScope::AllAttention,
            scaling: 1.0,
        }
    }
}

impl DualLoraConfig {
    /// Context branch only.
    pub fn context_only() -> Self {
        Self {
            n_prompt_loras: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self, d_model: usize) -> Result<()> {
        if self.rank == 0 || self.rank > d_model {
            return Err(Error::config(format!(
                "rank {} must lie in 1..={d_model}",
                self.rank
            )));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::config("init_std must be finite and non-negative"));
        }
        if !self.scaling.is_finite() {
            return Err(Error::config("scaling must be finite"));
        }
        if !self.context_lora && self.n_prompt_loras == 0 {
            return Err(Error::config("no adapter branch enabled"));
        }
        if self.combination == Combination::Vertical {
            if !self.context_lora {
                return Err(Error::config(
                    "vertical combination stacks onto the context branch, which is disabled",
                ));
            }
            if self.fusion != FusionKind::MeanAdd {
                return Err(Error::config(
                    "vertical combination only supports mean_add fusion",
                ));
            }
        }
        Ok(())
    }
}
