use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use super::command::{encode_command, Command};
use super::event::TransactionKind;
use super::ProtocolError;

/// Raw bytes per chunk line (about 684 base64 characters).
pub const DEFAULT_CHUNK_BYTES: usize = 512;

/// Base64 of each `chunk_bytes` slice of `bytes`.
pub fn base64_chunks(bytes: &[u8], chunk_bytes: usize) -> Vec<String> {
    assert!(chunk_bytes > 0, "chunk size must be positive");
    bytes.chunks(chunk_bytes).map(|c| B64.encode(c)).collect()
}

/// Full host → device write sequence for `bytes`: the start line carrying
/// the exact chunk count, one `SD_JPEG_CHUNK` line per chunk, then the end
/// line. Works for any file type.
pub fn chunk_payload(path: &str, bytes: &[u8], chunk_bytes: usize) -> Result<Vec<String>, ProtocolError> {
    if bytes.is_empty() {
        return Err(ProtocolError::InvalidCommand("cannot write an empty payload".into()));
    }
    let chunks = base64_chunks(bytes, chunk_bytes);
    let mut lines = Vec::with_capacity(chunks.len() + 2);
    lines.push(encode_command(&Command::SdWriteStart {
        path: path.to_string(),
        chunks: chunks.len(),
    })?);
    for c in chunks {
        lines.push(encode_command(&Command::SdWriteChunk(c))?);
    }
    lines.push(encode_command(&Command::SdWriteEnd)?);
    Ok(lines)
}

/// Device → host framing of a chunked read (`SD_JPEG` or `CAM_JPEG`).
pub fn chunked_response(kind: TransactionKind, bytes: &[u8], chunk_bytes: usize) -> Vec<String> {
    debug_assert!(kind.is_chunked());
    let mut lines = vec![format!("{}\n", kind.start_sentinel())];
    lines.extend(
        base64_chunks(bytes, chunk_bytes)
            .into_iter()
            .map(|c| format!("{}{c}\n", kind.payload_prefix())),
    );
    lines.push(format!("{}\n", kind.end_sentinel()));
    lines
}
