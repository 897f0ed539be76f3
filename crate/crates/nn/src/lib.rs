//! Minimal deterministic tensor engine for small CNNs.
//!
//! Provides the layer vocabulary needed by the CSI sensing networks
//! (2-D convolution, batch normalization, max pooling, flatten, dense,
//! ReLU, softmax), exact reverse-mode gradients for every layer, MSE and
//! cross-entropy losses, and SGD/Adam updates. Everything is `f64` and
//! single-threaded so that a fixed seed reproduces training bit for bit.
//!
//! Gradients are verified against central finite differences in the test
//! suite; see [`gradcheck`].

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layer;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::NnError;
pub use graph::{Gradients, ModelGraph, Trace};
pub use layer::{Layer, LayerSpec};
pub use loss::{cross_entropy, mse};
pub use optim::{Adam, Sgd};
pub use tensor::Tensor;
