//! A small convolutional network, implemented from scratch (forward,
//! backward, SGD with momentum), that classifies a binarized shape image
//! as one of the five organ shapes or none.

mod check;
mod kernels;
mod net;
mod tensor;
mod train;

pub(crate) mod io;

pub use check::{gradient_check, gradient_check_with};
pub use io::{load_weights, save_weights};
pub use net::{
    architecture_with_stages, cross_entropy_loss, default_architecture, EvalContext, Gradients,
    LayerSpec, ShapeNet,
};
pub use tensor::Tensor;
pub use train::{evaluate_accuracy, train, EpochStats, LabeledShape, TrainConfig};

pub(crate) use net::resize_plane;

/// Side length of the canonical square shape-classifier input.
pub const INPUT_SIDE: usize = 128;
/// Output class count: the five organs plus "none".
pub const CLASSES: usize = 6;
/// Class index of the "none" output.
pub const NONE_CLASS: usize = 5;
