//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! The engine is deliberately small: flat row-major storage, an arena tape
//! that records one node per tensor operation, and hand-written backward
//! rules for every primitive. Graphs are built per training step and freed
//! after `backward`; there is no cross-step graph retention and no
//! higher-order differentiation.
//!
//! Everything is generic over [`Real`] so the same model code runs in f32
//! for training and in f64 for finite-difference gradient checking.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod fdcheck;
pub mod init;
pub mod real;
pub mod store;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::GradError;
pub use fdcheck::{finite_difference_check, FdEntry, FdReport};
pub use real::Real;
pub use store::{ParamId, ParamStore};
pub use tape::{BnMode, CustomOp, Tape, TensorRef};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, GradError>;
