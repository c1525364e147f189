//! Video super-resolution with a cascaded temporal updating network (CTUN).
//!
//! The crate is self-contained: a dense rank-4 tensor kernel layer with
//! reverse-mode automatic differentiation, the CTUN architecture built on top
//! of it (implicit cascaded alignment, unidirectional propagation with a
//! hidden updater, pixel-shuffle reconstruction), frame-sequence I/O and
//! degradation synthesis, quality metrics with an efficiency profiler, and a
//! toy-scale trainer. No BLAS, no GPU, no external ML runtime.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{CtunError, Result};
pub use model::{CtunConfig, CtunModel, ParamStore, UgruVariant};
pub use tensor::{Shape, Tensor};
