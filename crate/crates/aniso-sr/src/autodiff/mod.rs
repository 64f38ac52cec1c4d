//! Minimal reverse-mode automatic differentiation: exactly the tensor
//! operations the autoencoder needs, plus Adam and weight serialization.

mod adam;
mod tape;
mod tensor;
mod weights;

pub use adam::{AdamParams, AdamState};
pub use tape::{BnMode, NodeId, Tape};
pub use tensor::Tensor;
pub use weights::{load_weights, save_weights, ModelWeights, WeightEntry, WeightKind};
