//! Minimal dense network with manual backpropagation.

mod distance;
mod loss;
mod network;
mod optim;
mod params;
mod tensor;

pub use distance::{cosine_distance, euclidean, layer_change_profile, manhattan};
pub use loss::{kl_feature_divergence, kl_feature_divergence_with_grad, softmax_cross_entropy, softmax_rows};
pub use network::{argmax_rows, Activation, DenseLayer, ForwardCache, Network};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use params::{layout_len, Layout, ParamRole, ParamSlot, ParamVector};
pub use tensor::Tensor;

/// Fraction of `predictions` equal to `labels`; 0 for empty input.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}
