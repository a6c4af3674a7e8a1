//! Dense numeric primitives with hand-derived gradients.
//!
//! The computation graph of this crate is fixed, so there is no general
//! autodiff: every backward pass is written by hand and certified against
//! the central finite-difference harness in [`gradcheck`].

pub mod gradcheck;
pub mod loss;
pub mod mlp;
pub mod optim;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_multi};
pub use loss::{log_sigmoid, log_softmax, sigmoid, softmax, softmax_ce, tempered_kl};
pub use mlp::{mlp_apply, mlp_backward, Activation, MlpGrads, MlpLayer, MlpParams, MlpTape};
pub use optim::{ema_update, AdamHyper, AdamState};
pub use tensor::{content_hash, GradBuf, Tensor};
