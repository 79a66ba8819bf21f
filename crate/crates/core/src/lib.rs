//! Linear representations of language models.
//!
//! Each model is represented by a vector in the prompt-embedding space whose
//! inner product with a prompt predicts whether the model solves it. The
//! vectors are fitted in closed form from a regularized pseudoinverse of the
//! source prompt matrix and can be extended with new models or prompts
//! without refitting.

pub mod baselines;
pub mod cli;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod io_store;
pub mod linalg;

pub use embeddings::{
    benchmark_vector, fit, FitState, ModelEmbeddings, PerformanceMatrix, PromptMatrix,
    PromptUpdate, Provenance,
};
pub use error::{Error, Result};
pub use linalg::{Matrix, RegularizationConfig};
