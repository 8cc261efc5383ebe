//! Host side of the protocol: one request-response exchange at a time over
//! a [`Connection`], with unsolicited lines (heatmap frames, log text)
//! buffered for the caller.

use std::collections::VecDeque;
use std::io::{self, Write};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use super::assembler::{Assembled, Assembler, TxState};
use super::chunk::{chunk_payload, DEFAULT_CHUNK_BYTES};
use super::command::{encode_command, Command};
use super::event::{parse_line, DeviceEvent, SdEntry, TransactionKind};
use super::transport::{spawn_line_reader, Connection};
use super::ProtocolError;

/// Unsolicited events kept while nobody polls; older ones are dropped.
const UNSOLICITED_CAPACITY: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("link error: {0}")]
    Io(#[from] io::Error),
    /// The response started but never completed (device reset, silence,
    /// corrupted chunk). Safe to retry.
    #[error("transaction discarded: {0}")]
    Discarded(String),
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("device error: {0}")]
    Device(String),
    #[error("device disconnected")]
    Disconnected,
    #[error("unexpected response: {0}")]
    Unexpected(String),
}

impl ClientError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ClientError::Discarded(_) | ClientError::Timeout(_))
    }
}

pub type Result<T, E = ClientError> = std::result::Result<T, E>;

pub struct DeviceClient {
    writer: Box<dyn Write + Send>,
    lines: Receiver<String>,
    assembler: Assembler,
    unsolicited: VecDeque<DeviceEvent>,
    response_timeout: Duration,
    chunk_bytes: usize,
    connected: bool,
}

impl DeviceClient {
    pub fn new(conn: Connection) -> Self {
        let lines = spawn_line_reader(conn.reader);
        Self {
            writer: conn.writer,
            lines,
            assembler: Assembler::default(),
            unsolicited: VecDeque::new(),
            response_timeout: Duration::from_secs(5),
            chunk_bytes: DEFAULT_CHUNK_BYTES,
            connected: true,
        }
    }

    /// How long to wait for the first line of a response.
    pub fn with_response_timeout(mut self, timeout: Duration) -> Self {
        self.response_timeout = timeout;
        self
    }

    /// Line-silence limit inside an open transaction.
    pub fn with_transaction_timeout(mut self, timeout: Duration) -> Self {
        self.assembler = Assembler::new(timeout);
        self
    }

    pub fn with_chunk_bytes(mut self, chunk_bytes: usize) -> Self {
        assert!(chunk_bytes > 0);
        self.chunk_bytes = chunk_bytes;
        self
    }

    fn send_raw(&mut self, line: &str) -> Result<()> {
        if !self.connected {
            return Err(ClientError::Disconnected);
        }
        let res = self.writer.write_all(line.as_bytes()).and_then(|_| self.writer.flush());
        res.map_err(|e| match e.kind() {
            io::ErrorKind::BrokenPipe => {
                self.connected = false;
                ClientError::Disconnected
            }
            _ => ClientError::Io(e),
        })
    }

    /// Sends one command without waiting for anything.
    pub fn send(&mut self, cmd: &Command) -> Result<()> {
        let line = encode_command(cmd)?;
        self.send_raw(&line)
    }

    fn stash(&mut self, event: DeviceEvent) {
        match event {
            DeviceEvent::HeatmapFrame(_) | DeviceEvent::FreeText(_) => {
                if self.unsolicited.len() == UNSOLICITED_CAPACITY {
                    self.unsolicited.pop_front();
                }
                self.unsolicited.push_back(event);
            }
            // stray sentinels or payload lines outside a request carry nothing usable
            other => log::debug!("ignoring stray {other:?}"),
        }
    }

    fn recv(&mut self, timeout: Duration) -> std::result::Result<DeviceEvent, RecvTimeoutError> {
        if !self.connected {
            return Err(RecvTimeoutError::Disconnected);
        }
        match self.lines.recv_timeout(timeout) {
            Ok(line) => Ok(parse_line(&line)),
            Err(RecvTimeoutError::Disconnected) => {
                self.connected = false;
                Err(RecvTimeoutError::Disconnected)
            }
            Err(e) => Err(e),
        }
    }

    /// Runs a command answered by a sentinel-bounded transaction and returns
    /// its payload.
    fn transaction(&mut self, cmd: &Command, kind: TransactionKind) -> Result<Vec<u8>> {
        // leftovers of an earlier failed exchange must not be completed by this one
        self.assembler.disconnect();
        self.send(cmd)?;
        let started = Instant::now();
        loop {
            let wait = if self.assembler.is_open() {
                self.assembler.timeout()
            } else {
                match self.response_timeout.checked_sub(started.elapsed()) {
                    Some(d) => d,
                    None => return Err(ClientError::Timeout(self.response_timeout)),
                }
            };
            let event = match self.recv(wait) {
                Ok(ev) => ev,
                Err(RecvTimeoutError::Timeout) => {
                    return match self.assembler.poll_timeout(Instant::now()) {
                        Some(tx) => Err(discarded(tx.diagnostic)),
                        None if self.assembler.is_open() => continue,
                        None => Err(ClientError::Timeout(self.response_timeout)),
                    };
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return match self.assembler.disconnect() {
                        Some(tx) => Err(discarded(tx.diagnostic)),
                        None => Err(ClientError::Disconnected),
                    };
                }
            };
            match self.assembler.feed(event, Instant::now()) {
                Assembled::Consumed => {}
                Assembled::Finished(tx) => {
                    if tx.state != TxState::Complete {
                        return Err(discarded(tx.diagnostic));
                    }
                    if tx.kind != kind {
                        return Err(ClientError::Unexpected(format!(
                            "{} response to {cmd:?}",
                            tx.kind.start_sentinel()
                        )));
                    }
                    return Ok(tx.payload);
                }
                Assembled::Replaced(tx) => {
                    self.assembler.disconnect();
                    return Err(discarded(tx.diagnostic));
                }
                Assembled::Passthrough(DeviceEvent::Error(msg)) => return Err(ClientError::Device(msg)),
                Assembled::Passthrough(DeviceEvent::Ok(msg)) => {
                    return Err(ClientError::Unexpected(format!("OK:{msg}")))
                }
                Assembled::Passthrough(other) => self.stash(other),
            }
        }
    }

    /// Waits for the `OK:` or `ERROR:` line answering a command.
    fn await_status(&mut self) -> Result<String> {
        let started = Instant::now();
        loop {
            let Some(wait) = self.response_timeout.checked_sub(started.elapsed()) else {
                return Err(ClientError::Timeout(self.response_timeout));
            };
            match self.recv(wait) {
                Ok(DeviceEvent::Ok(msg)) => return Ok(msg),
                Ok(DeviceEvent::Error(msg)) => return Err(ClientError::Device(msg)),
                Ok(other) => self.stash(other),
                Err(RecvTimeoutError::Timeout) => return Err(ClientError::Timeout(self.response_timeout)),
                Err(RecvTimeoutError::Disconnected) => return Err(ClientError::Disconnected),
            }
        }
    }

    pub fn list(&mut self, path: &str) -> Result<Vec<SdEntry>> {
        let payload = self.transaction(&Command::SdList(path.into()), TransactionKind::List)?;
        let text = String::from_utf8(payload).map_err(|e| ClientError::Unexpected(e.to_string()))?;
        text.lines()
            .map(|l| SdEntry::parse(l).map_err(ClientError::from))
            .collect()
    }

    /// `SD_READ`: text file content, each line newline-terminated.
    pub fn read_text(&mut self, path: &str) -> Result<String> {
        let payload = self.transaction(&Command::SdRead(path.into()), TransactionKind::TextRead)?;
        String::from_utf8(payload).map_err(|e| ClientError::Unexpected(e.to_string()))
    }

    /// `SD_JPEG`: exact file bytes (any file type).
    pub fn read_file(&mut self, path: &str) -> Result<Vec<u8>> {
        self.transaction(&Command::SdJpegRead(path.into()), TransactionKind::JpegRead)
    }

    /// Chunked write; returns the device's confirmation message.
    pub fn write_file(&mut self, path: &str, bytes: &[u8]) -> Result<String> {
        let lines = chunk_payload(path, bytes, self.chunk_bytes)?;
        for line in &lines {
            self.send_raw(line)?;
        }
        self.await_status()
    }

    pub fn delete(&mut self, path: &str) -> Result<String> {
        self.send(&Command::SdDelete(path.into()))?;
        self.await_status()
    }

    pub fn rmdir(&mut self, path: &str) -> Result<String> {
        self.send(&Command::SdRmdir(path.into()))?;
        self.await_status()
    }

    /// `CAM_CAPTURE`: one JPEG frame.
    pub fn capture(&mut self, width: u32, height: u32, quality: u8) -> Result<Vec<u8>> {
        self.transaction(
            &Command::CamCapture {
                width,
                height,
                quality,
            },
            TransactionKind::CamJpeg,
        )
    }

    pub fn stream_stop(&mut self) -> Result<()> {
        self.send(&Command::CamStreamStop)
    }

    pub fn heatmap_on(&mut self) -> Result<()> {
        self.send(&Command::HeatmapOn)
    }

    pub fn heatmap_off(&mut self) -> Result<()> {
        self.send(&Command::HeatmapOff)
    }

    pub fn menu_key(&mut self, key: char) -> Result<()> {
        self.send(&Command::MenuKey(key))
    }

    /// Next unsolicited event (heatmap frame or log text), waiting up to
    /// `timeout`. Stray transaction lines are skipped.
    pub fn poll(&mut self, timeout: Duration) -> Result<Option<DeviceEvent>> {
        if let Some(ev) = self.unsolicited.pop_front() {
            return Ok(Some(ev));
        }
        let deadline = Instant::now() + timeout;
        loop {
            let wait = deadline.saturating_duration_since(Instant::now());
            match self.recv(wait) {
                Ok(ev @ (DeviceEvent::HeatmapFrame(_) | DeviceEvent::FreeText(_))) => return Ok(Some(ev)),
                Ok(ev @ (DeviceEvent::Ok(_) | DeviceEvent::Error(_))) => return Ok(Some(ev)),
                Ok(other) => log::debug!("ignoring stray {other:?}"),
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => return Err(ClientError::Disconnected),
            }
        }
    }

    /// Drops buffered unsolicited events.
    pub fn clear_unsolicited(&mut self) {
        self.unsolicited.clear();
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }
}

fn discarded(diagnostic: Option<String>) -> ClientError {
    ClientError::Discarded(diagnostic.unwrap_or_else(|| "incomplete transaction".into()))
}
