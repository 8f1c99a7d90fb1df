//! Efficient CNN classification with a MobileNetV2-style backbone, a
//! dense classification head with a skip path, and a deterministic
//! federated-averaging simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod data;
pub mod error;
pub mod federated;
pub mod harness;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, ErrorCategory, Result};
pub use tensor::{Scalar, Tensor};
