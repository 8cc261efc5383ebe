//! The device's newline-terminated ASCII serial protocol: command encoding,
//! line classification, sentinel-bounded transaction assembly, chunked
//! base64 transfers and heatmap frames.

mod assembler;
mod chunk;
mod client;
mod colormap;
mod command;
mod event;
pub mod transport;

pub use assembler::{Assembled, Assembler, Transaction, TxState, DEFAULT_TRANSACTION_TIMEOUT};
pub use chunk::{base64_chunks, chunk_payload, chunked_response, DEFAULT_CHUNK_BYTES};
pub use client::{ClientError, DeviceClient};
pub use colormap::{colorize, colormap, ANCHORS, ANCHOR_POSITIONS};
pub use command::{encode_command, parse_command, validate_path, Command, MENU_KEYS};
pub use event::{decode_heatmap, encode_heatmap, parse_line, DeviceEvent, HeatmapFrame, SdEntry, TransactionKind};

/// Serial line rate of the real device.
pub const BAUD_RATE: u32 = 115_200;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("invalid command: {0}")]
    InvalidCommand(String),
    #[error("malformed heatmap frame: {0}")]
    MalformedFrame(String),
    #[error("malformed SD_FILE entry {0:?}")]
    MalformedEntry(String),
}
