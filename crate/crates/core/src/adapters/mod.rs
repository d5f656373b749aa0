//! Low-rank adapters on attention projections: a context branch that
//! reshapes the weight and prompt branches driven by a slot-prompt summary.
//!
//! Every branch is summed into the projection output inside
//! [`AdaptedProjection::forward`]. Other bypass modules (a small MLP, a
//! bottleneck adapter) would slot in there as further terms; none are
//! implemented.

pub mod config;
pub mod fusion;
pub mod lora;
pub mod projection;
pub mod registry;

pub use config::{
    Combination, DualLoraConfig, FusionKind, ProjectionRole, PromptMode, PromptScope,
    TargetProjections,
};
pub use fusion::{fuse, Fusion};
pub use lora::{context_delta, init_lora, LoraPair};
pub use projection::{
    prompt_summary_input, AdaptedProjection, Fingerprint, MergedPrompt, PromptInput,
};
pub use registry::{attach_adapters, expected_adapter_params, AdapterRegistry};
