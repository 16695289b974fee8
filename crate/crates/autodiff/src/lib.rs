//! Dense tensors with tape-based reverse-mode differentiation, an Adam
//! optimiser and a binary checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, CheckpointMeta};
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use params::{Bound, ParamStore};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Graph64 = Graph<f64>;
pub type ParamStore64 = ParamStore<f64>;
