//! Tensor arithmetic, reverse-mode differentiation, optimization and
//! parameter persistence.

mod adam;
mod archive;
mod gradcheck;
mod graph;
mod param;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use archive::Archive;
pub(crate) use archive::{put_f32, put_u32, ByteReader};
pub use gradcheck::{grad_check, GradCheckReport, ParamCheck, REL_ERROR_FLOOR};
pub use graph::{Gradients, Graph, Var, LAYER_NORM_EPS};
pub use param::{xavier_uniform, ParamId, ParamStore, ParamTensor};
pub use tensor::Tensor;
