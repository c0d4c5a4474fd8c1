//! Networks with bell-shaped elephant activations, their optimizers and the
//! kernel diagnostics used to study local learning.

pub mod activation;
pub mod checkpoint;
pub mod csvio;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod layer_norm;
pub mod linalg;
pub mod loss;
pub mod network;
pub mod optim;
pub mod rng;

pub use activation::{ActivationKind, ActivationSpec, ElephantParams};
pub use error::{Error, Result};
pub use linalg::{DenseMatrix, DenseVector};
pub use network::{build_mlp, flatten_gradients, GradientBundle, Layer, LayerSpec, Network};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use rng::RngState;
