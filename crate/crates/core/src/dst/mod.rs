//! Toy dialogue state tracking: corpus, prompts, splits, metrics, training
//! and per-slot evaluation.

pub mod corpus;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod generator;
pub mod metrics;
pub mod prompt;
pub mod split;
pub mod state;
pub mod train;

pub use corpus::{Corpus, Dialogue, SlotSchema, State, Turn};
pub use eval::{evaluate, EvalOptions, EvalReport, TurnPrediction};
pub use experiment::{run_trend, PretrainConfig, TrendConfig, TrendReport};
pub use metrics::{aga, jga, MatchRule, TurnFilter};
pub use split::{make_split, ZeroShotSplit};
pub use train::{train, TrainConfig, TrainReport, TrainTarget};
