//! Fixed-operation-set differentiable tensor engine.
//!
//! Eager arena graph in 64-bit precision. `Graph::grad` builds gradient
//! nodes out of the same op set, so gradients of gradients (needed when
//! inner-loop updates are recorded into the graph and an outer loss is
//! differentiated through them) come for free: the inner gradient is just
//! more graph, and a second reverse sweep walks it like any other forward
//! computation.

mod checkpoint;
mod data;
mod graph;
pub mod nn;
mod prpool;


pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use data::{GradRecord, ParamSet, TensorData};
pub use graph::{BoundParams, Graph, Tensor};
