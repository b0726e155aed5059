//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Every model computation is recorded on a [`Tape`] as a sequence of
//! primitive ops. [`Tape::gradient`] replays the record backwards once.
//! Values are generic over [`Real`]: `f32` is the working precision and
//! `f64` is used by gradient checks.

mod adam;
mod denormal;
mod error;
mod real;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamState};
pub use denormal::FlushDenormals;
pub use error::NumError;
pub use real::Real;
pub use tape::{CosineTarget, Tape, Var};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, NumError>;
