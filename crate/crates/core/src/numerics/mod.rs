//! Differentiable tensor substrate: tensors, the recording graph, layers,
//! seeded random streams, and the Adam optimizer.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod rng;
pub mod special;
pub mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use graph::{Gradients, Graph, Var};
pub use layers::{layer_forward, Layer, LayerKind, LayerParams};
pub use params::{ParamStore, Parameter};
pub use rng::{gauss_draw, unif_draw, RngStream};
pub use tensor::{Precision, Scalar, Tensor};
