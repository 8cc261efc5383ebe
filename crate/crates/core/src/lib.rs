//! Host-side toolkit for a tiny camera classifier on an ESP32-class device:
//! training the fixed CNN, exporting its weights in the device formats,
//! speaking the device's line-based serial protocol and simulating the device.

// `!(x > 0.0)` is how NaN gets rejected together with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
pub mod codec;
pub mod dataset;
pub mod model;
pub mod ops;
pub mod protocol;
pub mod sim;
pub mod tensor;

pub use tensor::{Tensor, TensorError};
