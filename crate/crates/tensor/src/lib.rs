//! Minimal dense tensor library with reverse-mode automatic differentiation.
//!
//! Everything runs on the CPU in plain row-major buffers. Ops validate
//! shapes, reject non-finite results, and record backward rules on an
//! implicit tape traced from the loss. `f32` is the working precision;
//! `f64` is available as a check mode for finite-difference gradient tests.

pub mod check;
pub mod conv;
pub mod error;
pub mod gemm;
pub mod io;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use conv::{conv2d, group_norm, pool, upsample_bilinear2x, PoolKind};
pub use error::{Result, TensorError};
pub use optim::{adam_step, AdamState};
pub use params::{ParamError, ParamSet};
pub use scalar::Scalar;
pub use tape::{backward, Tape};
pub use tensor::Tensor;
