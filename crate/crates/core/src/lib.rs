//! Retrieval-augmented discrete diffusion for knowledge-graph completion.
//!
//! A relation-gated multimodal KGE retriever scores every entity and
//! commits to a hard top-K shortlist; a conditional discrete denoiser
//! recovers clean entity identities and reranks exclusively within it.
//! The two are trained jointly: self-adversarial KGE warm-up with a
//! freeze, bidirectional denoising cross-entropy, and temperature-scaled
//! distillation from the retriever's candidate pools into the denoiser.

pub mod diffusion;
pub mod error;
pub mod evalrank;
pub mod gradsuite;
pub mod kgdata;
pub mod numkernel;
pub mod retriever;
pub mod trainer;

pub use error::{RaddError, Result};
