//! Virtual device: the firmware half of the serial protocol over a host
//! directory standing in for the SD card, with image-playback camera, boot
//! time weight loading, live inference and heatmap streaming.

mod camera;
mod sandbox;

pub use camera::Camera;
pub use sandbox::{SandboxError, SdRoot};

use std::fs;
use std::io::{self, Cursor, Write};
use std::path::Path;
use std::sync::mpsc::RecvTimeoutError;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::codecs::jpeg::JpegEncoder;
use image::imageops::FilterType;
use image::DynamicImage;

use crate::codec::{decode_bin, parse_config, TrainConfig};
use crate::dataset::{image_to_tensor, CONFIG_FILE, HEADER_DIR};
use crate::model::{argmax, conv2_heatmap, forward, quantize_heatmap, ModelWeights};
use crate::protocol::transport::{duplex, spawn_line_reader, Connection};
use crate::protocol::{
    chunked_response, encode_heatmap, parse_command, Command, HeatmapFrame, SdEntry, TransactionKind,
    DEFAULT_CHUNK_BYTES,
};

/// Inference pacing of the real device (about 6.3 frames per second).
pub const DEFAULT_TICK_INTERVAL: Duration = Duration::from_millis(160);

const DEFAULT_WEIGHTS_FILE: &str = "myWeights.bin";
const MAX_CAPTURE_SIDE: u32 = 2048;

#[derive(Debug, Clone)]
pub struct SimOptions {
    /// `None` disables automatic inference ticks.
    pub tick_interval: Option<Duration>,
    pub chunk_bytes: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            tick_interval: Some(DEFAULT_TICK_INTERVAL),
            chunk_bytes: DEFAULT_CHUNK_BYTES,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub weights: ModelWeights,
    pub class_labels: Vec<String>,
}

/// One classification of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub class_index: usize,
    pub confidence: f32,
    pub heatmap: HeatmapFrame,
}

struct PendingWrite {
    path: String,
    expected: usize,
    received: usize,
    data: Vec<u8>,
    failed: Option<String>,
}

pub struct VirtualDevice {
    sd: SdRoot,
    camera: Camera,
    config: Option<TrainConfig>,
    model: Option<LoadedModel>,
    heatmap_on: bool,
    streaming: bool,
    pending: Option<PendingWrite>,
    menu_presses: u64,
    chunk_bytes: usize,
}

fn ok(msg: impl std::fmt::Display) -> String {
    format!("OK:{msg}\n")
}

fn err(msg: impl std::fmt::Display) -> String {
    format!("ERROR:{msg}\n")
}

impl VirtualDevice {
    pub fn new(sd_root: &Path, camera: Camera) -> io::Result<Self> {
        Ok(Self {
            sd: SdRoot::new(sd_root)?,
            camera,
            config: None,
            model: None,
            heatmap_on: false,
            streaming: false,
            pending: None,
            menu_presses: 0,
            chunk_bytes: DEFAULT_CHUNK_BYTES,
        })
    }

    pub fn with_chunk_bytes(mut self, chunk_bytes: usize) -> Self {
        assert!(chunk_bytes > 0);
        self.chunk_bytes = chunk_bytes;
        self
    }

    pub fn sd_root(&self) -> &Path {
        self.sd.root()
    }

    pub fn config(&self) -> Option<&TrainConfig> {
        self.config.as_ref()
    }

    pub fn model(&self) -> Option<&LoadedModel> {
        self.model.as_ref()
    }

    pub fn heatmap_enabled(&self) -> bool {
        self.heatmap_on
    }

    /// Reads `/header/config.json` and loads the weights file it names (or
    /// `myWeights.bin`). Problems leave the device running without weights
    /// and are reported as log lines.
    pub fn boot(&mut self) -> Vec<String> {
        self.config = None;
        self.model = None;
        self.heatmap_on = false;
        self.pending = None;
        let mut out = vec!["TinyVis virtual device ready\n".to_string()];
        let header = self.sd.root().join(HEADER_DIR);
        let config_path = header.join(CONFIG_FILE);
        if config_path.is_file() {
            match fs::read_to_string(&config_path)
                .map_err(|e| e.to_string())
                .and_then(|t| parse_config(&t).map_err(|e| e.to_string()))
            {
                Ok(cfg) => {
                    out.push(format!("Config: {} classes {:?}\n", cfg.num_classes, cfg.class_labels));
                    self.config = Some(cfg);
                }
                Err(e) => out.push(format!("Config error: {e}\n")),
            }
        } else {
            out.push("Config: none\n".into());
        }
        let file = self
            .config
            .as_ref()
            .map(|c| c.weights_file.clone())
            .unwrap_or_else(|| DEFAULT_WEIGHTS_FILE.into());
        let weights_path = header.join(&file);
        if weights_path.is_file() {
            let loaded = fs::read(&weights_path)
                .map_err(|e| e.to_string())
                .and_then(|b| decode_bin(&b).map_err(|e| e.to_string()))
                .and_then(|bundle| {
                    let weights = bundle.to_model().map_err(|e| e.to_string())?;
                    Ok(LoadedModel {
                        weights,
                        class_labels: bundle.meta.class_labels,
                    })
                });
            match loaded {
                Ok(m) => {
                    out.push(format!(
                        "Weights loaded: /{HEADER_DIR}/{file} ({} params)\n",
                        m.weights.param_count()
                    ));
                    if let Some(cfg) = &self.config {
                        if cfg.class_labels != m.class_labels {
                            out.push("Warning: weight labels differ from config classLabels\n".into());
                        }
                    }
                    self.model = Some(m);
                }
                Err(e) => out.push(format!("Weights error: {e}; running without weights\n")),
            }
        } else {
            out.push("Weights: none\n".into());
        }
        out
    }

    /// Response lines (newline-terminated) to one command line.
    pub fn handle_line(&mut self, line: &str) -> Vec<String> {
        let cmd = match parse_command(line) {
            Ok(cmd) => cmd,
            Err(e) => {
                self.abort_write();
                return vec![err(e)];
            }
        };
        if !matches!(cmd, Command::SdWriteChunk(_) | Command::SdWriteEnd) {
            self.abort_write();
        }
        match cmd {
            Command::CamCapture {
                width,
                height,
                quality,
            } => self.capture(width, height, quality),
            Command::CamStreamStop => {
                self.streaming = false;
                vec![]
            }
            Command::SdList(p) => self.list(&p),
            Command::SdRead(p) => self.read_text(&p),
            Command::SdJpegRead(p) => self.read_bytes(&p),
            Command::SdWriteStart { path, chunks } => {
                self.pending = Some(PendingWrite {
                    path,
                    expected: chunks,
                    received: 0,
                    data: Vec::new(),
                    failed: None,
                });
                vec![]
            }
            Command::SdWriteChunk(b64) => self.write_chunk(&b64),
            Command::SdWriteEnd => self.write_end(),
            Command::SdDelete(p) => self.delete(&p),
            Command::SdRmdir(p) => self.rmdir(&p),
            Command::HeatmapOn => {
                self.heatmap_on = true;
                vec![]
            }
            Command::HeatmapOff => {
                self.heatmap_on = false;
                vec![]
            }
            Command::MenuKey(k) => {
                self.menu_presses += 1;
                vec![format!("MENU:{k} state {}\n", self.menu_presses)]
            }
        }
    }

    fn abort_write(&mut self) {
        if let Some(p) = self.pending.take() {
            log::warn!("sim: write of {} abandoned after {} chunks", p.path, p.received);
        }
    }

    fn capture(&mut self, width: u32, height: u32, quality: u8) -> Vec<String> {
        if !(1..=MAX_CAPTURE_SIDE).contains(&width) || !(1..=MAX_CAPTURE_SIDE).contains(&height) {
            return vec![err(format!("Invalid capture size {width}x{height}"))];
        }
        let Some(frame) = self.camera.next_frame() else {
            return vec![err("Camera unavailable")];
        };
        let rgb = image::imageops::resize(&frame.to_rgb8(), width, height, FilterType::Triangle);
        let mut jpeg = Cursor::new(Vec::new());
        let q = quality.clamp(1, 100);
        if let Err(e) = JpegEncoder::new_with_quality(&mut jpeg, q).encode_image(&rgb) {
            return vec![err(format!("JPEG encode failed: {e}"))];
        }
        chunked_response(TransactionKind::CamJpeg, jpeg.get_ref(), self.chunk_bytes)
    }

    fn list(&self, path: &str) -> Vec<String> {
        let host = match self.sd.resolve(path) {
            Ok(h) => h,
            Err(e) => return vec![err(e)],
        };
        if !host.is_dir() {
            let why = if host.exists() { "Not a directory" } else { "Not found" };
            return vec![err(format!("{why} {path}"))];
        }
        let mut entries = Vec::new();
        match fs::read_dir(&host) {
            Ok(rd) => {
                for e in rd.flatten() {
                    let Ok(meta) = e.metadata() else { continue };
                    let name = e.file_name().to_string_lossy().into_owned();
                    if name.contains(['\n', '\r']) {
                        continue;
                    }
                    entries.push(SdEntry {
                        is_dir: meta.is_dir(),
                        size: if meta.is_dir() { 0 } else { meta.len() },
                        name,
                    });
                }
            }
            Err(e) => return vec![err(format!("Cannot open {path}: {e}"))],
        }
        entries.sort_by(|a, b| a.name.cmp(&b.name));
        let kind = TransactionKind::List;
        let mut out = vec![format!("{}\n", kind.start_sentinel())];
        out.extend(entries.iter().map(|e| format!("{}{}\n", kind.payload_prefix(), e.to_payload())));
        out.push(format!("{}\n", kind.end_sentinel()));
        out
    }

    fn read_file(&self, path: &str) -> Result<Vec<u8>, String> {
        let host = self.sd.resolve(path).map_err(|e| e.to_string())?;
        if host.is_dir() {
            return Err(format!("Is a directory {path}"));
        }
        if !host.is_file() {
            return Err(format!("Not found {path}"));
        }
        fs::read(&host).map_err(|e| format!("Cannot read {path}: {e}"))
    }

    fn read_text(&self, path: &str) -> Vec<String> {
        let bytes = match self.read_file(path) {
            Ok(b) => b,
            Err(e) => return vec![err(e)],
        };
        let text = String::from_utf8_lossy(&bytes);
        let kind = TransactionKind::TextRead;
        let mut out = vec![format!("{}\n", kind.start_sentinel())];
        let body = text.strip_suffix('\n').unwrap_or(&text);
        if !text.is_empty() {
            for line in body.split('\n') {
                let line = line.strip_suffix('\r').unwrap_or(line);
                out.push(format!("{}{line}\n", kind.payload_prefix()));
            }
        }
        out.push(format!("{}\n", kind.end_sentinel()));
        out
    }

    fn read_bytes(&self, path: &str) -> Vec<String> {
        match self.read_file(path) {
            Ok(b) => chunked_response(TransactionKind::JpegRead, &b, self.chunk_bytes),
            Err(e) => vec![err(e)],
        }
    }

    fn write_chunk(&mut self, b64: &str) -> Vec<String> {
        let Some(p) = self.pending.as_mut() else {
            return vec![err("No write in progress")];
        };
        p.received += 1;
        if p.failed.is_none() {
            match B64.decode(b64) {
                Ok(bytes) => p.data.extend_from_slice(&bytes),
                Err(e) => p.failed = Some(format!("Bad chunk {}: {e}", p.received)),
            }
        }
        vec![]
    }

    fn write_end(&mut self) -> Vec<String> {
        let Some(p) = self.pending.take() else {
            return vec![err("No write in progress")];
        };
        if let Some(why) = p.failed {
            return vec![err(why)];
        }
        if p.received != p.expected {
            return vec![err(format!(
                "Chunk count mismatch for {}: expected {}, got {}",
                p.path, p.expected, p.received
            ))];
        }
        let host = match self.sd.resolve(&p.path) {
            Ok(h) => h,
            Err(e) => return vec![err(e)],
        };
        if host == self.sd.root() || host.is_dir() {
            return vec![err(format!("Is a directory {}", p.path))];
        }
        let res = host
            .parent()
            .map(fs::create_dir_all)
            .unwrap_or(Ok(()))
            .and_then(|_| fs::write(&host, &p.data));
        match res {
            Ok(()) => vec![ok(format!("JPEG_WRITE_DONE {} ({}B)", p.path, p.data.len()))],
            Err(e) => vec![err(format!("Write failed {}: {e}", p.path))],
        }
    }

    fn delete(&self, path: &str) -> Vec<String> {
        let host = match self.sd.resolve(path) {
            Ok(h) => h,
            Err(e) => return vec![err(e)],
        };
        if host.is_dir() {
            return vec![err(format!("Is a directory {path}"))];
        }
        if !host.exists() {
            return vec![err(format!("Not found {path}"))];
        }
        match fs::remove_file(&host) {
            Ok(()) => vec![ok("Deleted")],
            Err(e) => vec![err(format!("Delete failed {path}: {e}"))],
        }
    }

    fn rmdir(&self, path: &str) -> Vec<String> {
        let host = match self.sd.resolve(path) {
            Ok(h) => h,
            Err(e) => return vec![err(e)],
        };
        if host == self.sd.root() {
            return vec![err("Cannot remove the root directory")];
        }
        if !host.is_dir() {
            let why = if host.exists() { "Not a directory" } else { "Not found" };
            return vec![err(format!("{why} {path}"))];
        }
        match fs::remove_dir_all(&host) {
            Ok(()) => vec![ok("Deleted")],
            Err(e) => vec![err(format!("Delete failed {path}: {e}"))],
        }
    }

    /// Classifies one image with the loaded weights.
    pub fn classify(&self, image: &DynamicImage) -> Option<Inference> {
        let model = self.model.as_ref()?;
        let spec = model.weights.spec;
        let input = image_to_tensor(image, spec.input_size, spec.grayscale());
        let cache = forward(&model.weights, &input).ok()?;
        let (class_index, confidence) = argmax(cache.probs.data());
        let map = conv2_heatmap(&cache.conv2_act);
        let (rows, cols) = (map.shape()[0], map.shape()[1]);
        Some(Inference {
            class_index,
            confidence,
            heatmap: HeatmapFrame {
                rows,
                cols,
                bytes: quantize_heatmap(&map),
            },
        })
    }

    /// One inference cycle on the next camera frame: a `HEATMAP:` line when
    /// streaming is on, then a `PRED:<index>:<label>:<confidence>` log line.
    /// Nothing without weights or frames.
    pub fn inference_tick(&mut self) -> Vec<String> {
        if self.model.is_none() {
            return vec![];
        }
        let Some(frame) = self.camera.next_frame() else {
            return vec![];
        };
        let Some(inf) = self.classify(&frame) else {
            return vec![];
        };
        let label = &self.model.as_ref().expect("checked").class_labels[inf.class_index];
        let mut out = Vec::new();
        if self.heatmap_on {
            out.push(encode_heatmap(&inf.heatmap));
        }
        out.push(format!("PRED:{}:{label}:{:.4}\n", inf.class_index, inf.confidence));
        out
    }
}

/// Parses a `PRED:` log line into (class index, label, confidence).
pub fn parse_prediction(line: &str) -> Option<(usize, String, f32)> {
    let rest = line.trim_end().strip_prefix("PRED:")?;
    let (idx, rest) = rest.split_once(':')?;
    let (label, conf) = rest.rsplit_once(':')?;
    Some((idx.parse().ok()?, label.to_string(), conf.parse().ok()?))
}

/// Serves one connection: boot lines first, then commands and inference
/// ticks until the peer hangs up or a write fails.
pub fn run(mut device: VirtualDevice, conn: Connection, options: &SimOptions) -> io::Result<()> {
    let Connection { reader, mut writer } = conn;
    let lines = spawn_line_reader(reader);
    let mut send = |out: Vec<String>| -> io::Result<()> {
        for l in out {
            writer.write_all(l.as_bytes())?;
        }
        writer.flush()
    };
    send(device.boot())?;
    let mut next_tick = options.tick_interval.map(|d| Instant::now() + d);
    loop {
        let wait = next_tick
            .map(|t| t.saturating_duration_since(Instant::now()))
            .unwrap_or(Duration::from_secs(3600));
        match lines.recv_timeout(wait) {
            Ok(line) => send(device.handle_line(&line))?,
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return Ok(()),
        }
        if let (Some(t), Some(interval)) = (next_tick, options.tick_interval) {
            if Instant::now() >= t {
                send(device.inference_tick())?;
                next_tick = Some(Instant::now() + interval);
            }
        }
    }
}

/// Starts `device` on a background thread behind an in-memory link and
/// returns the host end.
pub fn spawn_in_memory(device: VirtualDevice, options: SimOptions) -> (Connection, JoinHandle<io::Result<()>>) {
    let (host, dev) = duplex();
    let handle = thread::Builder::new()
        .name("virtual-device".into())
        .spawn(move || run(device, dev, &options))
        .expect("spawn simulator");
    (host, handle)
}
