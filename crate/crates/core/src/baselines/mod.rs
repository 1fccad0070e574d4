//! Comparison methods: graph kernels with a prototypical classifier, a
//! last-layer finetuning baseline, and prototypical evaluation of a
//! conventionally trained backbone.

pub mod finetune;
pub mod kernels;
pub mod prototypical;

pub use finetune::{finetune_episode, pretrain, FinetuneConfig, PretrainConfig};
pub use kernels::{
    graphlet_kernel, sp_kernel, wl_kernel, Discretizer, Histogram, Kernel, KernelMatrix,
};
pub use prototypical::{
    embedding_episode, embedding_prototype_distances, kernel_episode, kernel_prototype_distances,
    nearest_prototype, Prediction,
};
