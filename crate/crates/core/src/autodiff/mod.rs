//! Dense tensors with a minimal reverse-mode differentiation engine.

mod gradcheck;
mod graph;
pub mod init;
pub mod ops;
mod optim;

pub use gradcheck::{
    compare_gradients, grad_check, relative_error, EntryCheck, GradCheckOptions, GradCheckReport,
};
pub use graph::{Gradients, Graph, NodeId, ParamId, ParamStore};
pub use ops::UnaryFn;
pub use optim::Sgd;
