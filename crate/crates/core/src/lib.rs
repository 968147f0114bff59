//! Abstractive summarization trained with a composite objective: token-level
//! maximum likelihood plus a semantic-similarity term scored by a frozen
//! encoder whose gradients still reach the summarizer.

pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod model;
pub mod rouge;
pub mod search;
pub mod semsim;
pub mod stats;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use model::{Mode, ModelConfig, SeqModel};
pub use semsim::{ScorerLM, SemSimHead};
pub use tensor::{Graph, ParamSet, Real, Tensor, Var};
pub use tokenizer::{Role, TokenSequence, Vocab};
