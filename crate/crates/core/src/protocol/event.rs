use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use super::ProtocolError;

/// Multi-line response families, each bounded by `<X>_START` / `<X>_END`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransactionKind {
    /// `SD_LIST_START`, `SD_FILE:…`, `SD_LIST_END`
    List,
    /// `SD_CONTENT_START`, `SD_LINE:…`, `SD_CONTENT_END`
    TextRead,
    /// `SD_JPEG_START`, `SD_JPEG:<b64>`, `SD_JPEG_END`
    JpegRead,
    /// `CAM_JPEG_START`, `CAM_JPEG:<b64>`, `CAM_JPEG_END`
    CamJpeg,
}

impl TransactionKind {
    pub const ALL: [TransactionKind; 4] = [
        TransactionKind::List,
        TransactionKind::TextRead,
        TransactionKind::JpegRead,
        TransactionKind::CamJpeg,
    ];

    pub fn start_sentinel(self) -> &'static str {
        match self {
            TransactionKind::List => "SD_LIST_START",
            TransactionKind::TextRead => "SD_CONTENT_START",
            TransactionKind::JpegRead => "SD_JPEG_START",
            TransactionKind::CamJpeg => "CAM_JPEG_START",
        }
    }

    pub fn end_sentinel(self) -> &'static str {
        match self {
            TransactionKind::List => "SD_LIST_END",
            TransactionKind::TextRead => "SD_CONTENT_END",
            TransactionKind::JpegRead => "SD_JPEG_END",
            TransactionKind::CamJpeg => "CAM_JPEG_END",
        }
    }

    /// Prefix of payload lines, colon included.
    pub fn payload_prefix(self) -> &'static str {
        match self {
            TransactionKind::List => "SD_FILE:",
            TransactionKind::TextRead => "SD_LINE:",
            TransactionKind::JpegRead => "SD_JPEG:",
            TransactionKind::CamJpeg => "CAM_JPEG:",
        }
    }

    /// Whether payload lines carry base64 chunks rather than text.
    pub fn is_chunked(self) -> bool {
        matches!(self, TransactionKind::JpegRead | TransactionKind::CamJpeg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatmapFrame {
    pub rows: usize,
    pub cols: usize,
    /// Row-major intensities, `rows·cols` long.
    pub bytes: Vec<u8>,
}

/// Device → host lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeviceEvent {
    TransactionStart(TransactionKind),
    PayloadLine(TransactionKind, String),
    TransactionEnd(TransactionKind),
    Ok(String),
    Error(String),
    HeatmapFrame(HeatmapFrame),
    FreeText(String),
}

/// `HEATMAP:<rows>x<cols>:<base64>`
pub fn decode_heatmap(line: &str) -> Result<HeatmapFrame, ProtocolError> {
    let line = line.trim_end_matches(['\n', '\r']);
    let malformed = |why: &str| ProtocolError::MalformedFrame(why.to_string());
    let rest = line
        .strip_prefix("HEATMAP:")
        .ok_or_else(|| malformed("missing HEATMAP: prefix"))?;
    let (dims, payload) = rest.split_once(':').ok_or_else(|| malformed("missing payload"))?;
    let (r, c) = dims.split_once('x').ok_or_else(|| malformed("dimensions are not RxC"))?;
    let rows: usize = r.parse().map_err(|_| malformed("bad row count"))?;
    let cols: usize = c.parse().map_err(|_| malformed("bad column count"))?;
    let bytes = B64
        .decode(payload)
        .map_err(|e| ProtocolError::MalformedFrame(format!("base64: {e}")))?;
    if rows.checked_mul(cols) != Some(bytes.len()) {
        return Err(ProtocolError::MalformedFrame(format!(
            "{rows}x{cols} frame carries {} bytes",
            bytes.len()
        )));
    }
    Ok(HeatmapFrame { rows, cols, bytes })
}

pub fn encode_heatmap(frame: &HeatmapFrame) -> String {
    format!("HEATMAP:{}x{}:{}\n", frame.rows, frame.cols, B64.encode(&frame.bytes))
}

/// Classifies one received line. Anything unrecognised (including malformed
/// heatmap frames) is returned as [`DeviceEvent::FreeText`] so a serial
/// monitor never loses output.
pub fn parse_line(line: &str) -> DeviceEvent {
    let line = line.trim_end_matches(['\n', '\r']);
    for kind in TransactionKind::ALL {
        if line == kind.start_sentinel() {
            return DeviceEvent::TransactionStart(kind);
        }
        if line == kind.end_sentinel() {
            return DeviceEvent::TransactionEnd(kind);
        }
        if let Some(data) = line.strip_prefix(kind.payload_prefix()) {
            return DeviceEvent::PayloadLine(kind, data.to_string());
        }
    }
    if let Some(msg) = line.strip_prefix("OK:") {
        return DeviceEvent::Ok(msg.to_string());
    }
    if let Some(msg) = line.strip_prefix("ERROR:") {
        return DeviceEvent::Error(msg.to_string());
    }
    if line.starts_with("HEATMAP:") {
        if let Ok(frame) = decode_heatmap(line) {
            return DeviceEvent::HeatmapFrame(frame);
        }
    }
    DeviceEvent::FreeText(line.to_string())
}

/// One `SD_LIST` entry: `SD_FILE:<D|F>:<size>:<name>`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SdEntry {
    pub is_dir: bool,
    pub size: u64,
    pub name: String,
}

impl SdEntry {
    pub fn to_payload(&self) -> String {
        format!("{}:{}:{}", if self.is_dir { 'D' } else { 'F' }, self.size, self.name)
    }

    pub fn parse(payload: &str) -> Result<Self, ProtocolError> {
        let bad = || ProtocolError::MalformedEntry(payload.to_string());
        let mut parts = payload.splitn(3, ':');
        let kind = parts.next().ok_or_else(bad)?;
        let size = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let name = parts.next().ok_or_else(bad)?.to_string();
        let is_dir = match kind {
            "D" => true,
            "F" => false,
            _ => return Err(bad()),
        };
        Ok(Self { is_dir, size, name })
    }
}
