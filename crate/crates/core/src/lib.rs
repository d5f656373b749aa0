pub mod adapters;
pub mod checkpoint;
pub mod dst;
pub mod error;
pub mod model;
pub mod rng;
pub mod tensor;

pub use adapters::{attach_adapters, AdapterRegistry, DualLoraConfig};
pub use error::{Error, Result};
pub use model::{ModelConfig, Seq2Seq, Tokenizer};
pub use tensor::{Graph, Tensor, Var};
