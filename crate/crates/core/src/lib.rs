//! Few-shot graph classification with an adaptive-step meta-learner.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`] and [`tu`]: graph data model, TU-format ingestion, class-disjoint
//!   splits and N-way-K-shot episode sampling.
//! - [`autodiff`]: a tape-based reverse-mode differentiator on small dense
//!   matrices, able to differentiate through inner gradient steps.
//! - [`backbone`]: mean-aggregator convolutions with self-attention top-k
//!   pooling, mean‖max readouts and an MLP classifier.
//! - [`ani`]: average node information of final-layer node embeddings.
//! - [`meta`]: inner-loop adaptation and the outer meta-update.
//! - [`controller`]: the recurrent stop-probability controller trained with
//!   REINFORCE that picks the number of adaptation steps.
//! - [`baselines`]: graph kernels with a prototypical classifier, the
//!   finetuning baseline and prototypical evaluation of a supervised backbone.
//! - [`harness`]: configuration, training loop, evaluation, CSV output.

pub mod ani;
pub mod autodiff;
pub mod backbone;
pub mod baselines;
pub mod controller;
pub mod error;
pub mod graph;
pub mod harness;
pub mod meta;
pub mod synth;
pub mod tensor;
pub mod tu;

pub use error::{Error, Result};
pub use tensor::Tensor;
