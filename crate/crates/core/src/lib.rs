//! Dense tensors and reverse-mode automatic differentiation.
//!
//! Everything runs on a flat Wengert tape: forward ops append nodes that
//! carry their values plus enough context to replay the chain rule, and
//! `Tape::backward` walks the records once in reverse execution order.
//! Values are immutable after creation; gradients accumulate per node.
//!
//! The tape is generic over the element type. Training code runs in `f32`;
//! gradient checking runs the same graph in `f64` against central finite
//! differences (see [`gradcheck`]).

pub mod gradcheck;
pub mod init;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

mod ops;

pub use params::{ParamId, ParamStore, Session};
pub use scalar::Scalar;
pub use tape::{NodeId, PadMode, Tape};
pub use tensor::TensorData;

/// Errors surfaced by fallible entry points. Shape violations inside op
/// kernels are programming errors and panic with a "shape mismatch" or
/// "config:" message instead.
#[derive(thiserror::Error, Debug)]
pub enum CoreError {
    #[error("backward target must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("config: {0}")]
    Config(String),
}
