//! Dense arithmetic, the MLP embedding function and its reverse-mode gradients.

mod matrix;
mod mlp;
mod params;

pub use matrix::{distance_matrix, dot, norm, pairwise_distance, Matrix, Vec64};
pub(crate) use matrix::distance_unchecked;
pub use mlp::{
    gradient, gradient_from_pass, objective_value, Activation, ForwardPass, Grads, MlpSpec, Objective,
    DEGENERATE_NORM,
};
pub use params::{GradVector, LayerShape, ParamLayout, ParamVector};
