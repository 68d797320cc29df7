//! Measurement instruments for training dynamics. All of them read network
//! state through inspect-mode forwards and restore anything they perturb,
//! so attaching them never changes a training trajectory.

mod classgrad;
mod coherence;
mod divergence;
mod histogram;
mod moments;
mod probe;

pub use classgrad::{
    channel_gradients, channel_gradients_from, class_grad_heatmap, classwise_gradient_mask, masked_backward,
    mean_vs_grad_from, mean_vs_grad_pairs, ClassGradHeatmap, ClassMask, LayerChannelGradients, MeanGradPair,
};
pub use coherence::{
    channel_grad_matrix, channel_grad_matrix_for, coherence_from_summands, conv_summands, layer_coherence,
    sign_coherence, CoherenceRow, RATIO_SENTINEL,
};
pub use divergence::{
    capture_divergence, first_divergence, is_divergent, DivergenceConfig, DivergenceEvent, DivergenceMonitor,
};
pub use histogram::{gradient_histogram_stats, HistogramStats};
pub use moments::{channel_moments, depth_moment_profile, profile_from_taps, LayerMoments, MomentProfile};
pub use probe::{default_probe_alphas, loss_step_probe, LossProbeCurve};
