//! Reverse-mode differentiable fp64 arrays.
//!
//! [`Graph`] records primitives eagerly; [`Graph::backward`] returns the
//! gradient of a scalar node with respect to every leaf. [`finite_diff`] is
//! the numerical oracle the analytic adjoints are tested against.

mod array;
mod check;
mod graph;
pub(crate) mod kernels;

pub use array::Array;
pub use check::{finite_diff, max_rel_err, rel_err};
pub(crate) use graph::softmax_row;
pub use graph::{backward, Gradients, Graph, NodeId};
pub use kernels::{conv_out_len, ConvGeom};
