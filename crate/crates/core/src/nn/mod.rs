//! Layers, normalization, loss, optimizer and the network builder.

mod batchnorm;
mod layers;
mod loss;
mod model;
mod network;
mod norm;
mod sgd;

pub use batchnorm::{BatchNormLayer, BnCache, BnSettings, BnToggles};
pub use layers::{
    global_avg_pool, global_avg_pool_backward, pad_channels, relu, relu_backward, unpad_channels, Conv3x3, Dense,
    DenseGradients,
};
pub use loss::{accuracy, per_example_logit_grads, softmax, softmax_xent};
pub use model::Model;
pub use network::{
    build_network, Arch, Backprop, BackwardOptions, Batch, LayerKind, LayerSpec, Mode, Network, NetworkConfig,
    NormPlacement, ParamInfo, ParamRole,
};
pub use norm::{generalized_norm, generalized_norm_backward, group_stats, GroupStats, GroupedNorm, Grouping, NormCache, NormGradients};
pub use sgd::{LrSchedule, SgdState, StepReport};
