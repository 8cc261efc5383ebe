//! Conversion between training-layout weights and the device file formats.

mod bin;
mod cheader;
mod config;
mod device;
pub mod transpose;

pub use bin::{
    decode_bin, decode_bin_with, encode_bin, encode_bin_with, encode_header, BinFormat, HeaderMeta,
    WeightBundle, DEFAULT_BEGIN_SENTINEL, DEFAULT_END_SENTINEL, HEADER_VERSION,
};
pub use cheader::{emit_c_header, format_g9};
pub use config::{emit_config, parse_config, TrainConfig, REQUIRED_FIELDS};
pub use device::device_forward;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("malformed weights header: {0}")]
    MalformedHeader(String),
    #[error("truncated weights payload: expected {expected} bytes, found {actual}")]
    TruncatedWeights { expected: usize, actual: usize },
    #[error("{extra} unexpected bytes after the weights payload")]
    TrailingData { extra: usize },
    #[error("layout error: {0}")]
    Layout(String),
    #[error("invalid config field {field:?}: {reason}")]
    ConfigInvalid { field: String, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
