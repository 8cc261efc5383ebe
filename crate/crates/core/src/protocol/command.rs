use super::ProtocolError;

/// Host → device commands.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Command {
    CamCapture { width: u32, height: u32, quality: u8 },
    CamStreamStop,
    SdList(String),
    SdRead(String),
    SdJpegRead(String),
    SdWriteStart { path: String, chunks: usize },
    SdWriteChunk(String),
    SdWriteEnd,
    SdDelete(String),
    SdRmdir(String),
    HeatmapOn,
    HeatmapOff,
    MenuKey(char),
}

pub const MENU_KEYS: [char; 7] = ['1', '2', '3', '4', '5', 't', 'l'];

/// Device paths are absolute and single-line.
pub fn validate_path(path: &str) -> Result<(), ProtocolError> {
    if !path.starts_with('/') {
        return Err(ProtocolError::InvalidPath(format!("{path:?} is not absolute")));
    }
    if path.contains(['\n', '\r', '\0']) {
        return Err(ProtocolError::InvalidPath(format!("{path:?} contains a control character")));
    }
    Ok(())
}

fn is_base64_text(s: &str) -> bool {
    s.bytes()
        .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'+' | b'/' | b'='))
}

/// Wire form of `cmd`, including the trailing newline.
pub fn encode_command(cmd: &Command) -> Result<String, ProtocolError> {
    use Command::*;
    let line = match cmd {
        CamCapture {
            width,
            height,
            quality,
        } => format!("CAM_CAPTURE:{width}x{height}:{quality}"),
        CamStreamStop => "CAM_STREAM_STOP".into(),
        SdList(p) => {
            validate_path(p)?;
            format!("SD_LIST:{p}")
        }
        SdRead(p) => {
            validate_path(p)?;
            format!("SD_READ:{p}")
        }
        SdJpegRead(p) => {
            validate_path(p)?;
            format!("SD_JPEG:{p}")
        }
        SdWriteStart { path, chunks } => {
            validate_path(path)?;
            if *chunks == 0 {
                return Err(ProtocolError::InvalidCommand("chunk count must be at least 1".into()));
            }
            format!("SD_JPEG_WRITE_START:{path}:{chunks}")
        }
        SdWriteChunk(b64) => {
            if !is_base64_text(b64) {
                return Err(ProtocolError::InvalidCommand("chunk is not base64 text".into()));
            }
            format!("SD_JPEG_CHUNK:{b64}")
        }
        SdWriteEnd => "SD_JPEG_WRITE_END".into(),
        SdDelete(p) => {
            validate_path(p)?;
            format!("SD_DELETE:{p}")
        }
        SdRmdir(p) => {
            validate_path(p)?;
            format!("SD_RMDIR:{p}")
        }
        HeatmapOn => "HEATMAP_ON".into(),
        HeatmapOff => "HEATMAP_OFF".into(),
        MenuKey(k) => {
            if !MENU_KEYS.contains(k) {
                return Err(ProtocolError::InvalidCommand(format!("{k:?} is not a menu key")));
            }
            k.to_string()
        }
    };
    Ok(line + "\n")
}

/// Device-side decoding of one command line (newline optional).
pub fn parse_command(line: &str) -> Result<Command, ProtocolError> {
    let line = line.trim_end_matches(['\n', '\r']);
    let bad = || ProtocolError::InvalidCommand(line.chars().take(80).collect());
    let path = |p: &str| -> Result<String, ProtocolError> {
        validate_path(p)?;
        Ok(p.to_string())
    };
    if let Some(rest) = line.strip_prefix("CAM_CAPTURE:") {
        let (size, q) = rest.split_once(':').ok_or_else(bad)?;
        let (w, h) = size.split_once('x').ok_or_else(bad)?;
        return Ok(Command::CamCapture {
            width: w.parse().map_err(|_| bad())?,
            height: h.parse().map_err(|_| bad())?,
            quality: q.parse().map_err(|_| bad())?,
        });
    }
    if let Some(rest) = line.strip_prefix("SD_JPEG_WRITE_START:") {
        let (p, n) = rest.rsplit_once(':').ok_or_else(bad)?;
        let chunks: usize = n.parse().map_err(|_| bad())?;
        if chunks == 0 {
            return Err(bad());
        }
        return Ok(Command::SdWriteStart { path: path(p)?, chunks });
    }
    if let Some(rest) = line.strip_prefix("SD_JPEG_CHUNK:") {
        if !is_base64_text(rest) {
            return Err(bad());
        }
        return Ok(Command::SdWriteChunk(rest.to_string()));
    }
    for (prefix, ctor) in [
        ("SD_LIST:", Command::SdList as fn(String) -> Command),
        ("SD_READ:", Command::SdRead),
        ("SD_JPEG:", Command::SdJpegRead),
        ("SD_DELETE:", Command::SdDelete),
        ("SD_RMDIR:", Command::SdRmdir),
    ] {
        if let Some(rest) = line.strip_prefix(prefix) {
            return Ok(ctor(path(rest)?));
        }
    }
    match line {
        "CAM_STREAM_STOP" => Ok(Command::CamStreamStop),
        "SD_JPEG_WRITE_END" => Ok(Command::SdWriteEnd),
        "HEATMAP_ON" => Ok(Command::HeatmapOn),
        "HEATMAP_OFF" => Ok(Command::HeatmapOff),
        _ => {
            let mut chars = line.chars();
            match (chars.next(), chars.next()) {
                (Some(k), None) if MENU_KEYS.contains(&k) => Ok(Command::MenuKey(k)),
                _ => Err(bad()),
            }
        }
    }
}
