//! A small encoder-decoder transformer and its tokenizer.

pub mod attention;
pub mod config;
pub mod tokenizer;
pub mod trace;
pub mod transformer;

pub use attention::{causal_mask, Attention};
pub use config::ModelConfig;
pub use tokenizer::Tokenizer;
pub use trace::{prompt_attention_mass, AttentionStack, AttentionTrace};
pub use transformer::{EncoderInput, ForwardOptions, Layout, ParamKind, Seq2Seq};
