//! Reassembly of sentinel-bounded multi-line responses.
//!
//! A transaction completes only when its own end sentinel arrives. A new
//! start sentinel, a line-silence timeout or a lost connection while a
//! transaction is open discards it, and a discarded transaction never
//! releases a partial payload.

use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use super::event::{DeviceEvent, TransactionKind};

pub const DEFAULT_TRANSACTION_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxState {
    Open,
    Complete,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub kind: TransactionKind,
    /// Text kinds: each payload line followed by `\n`. Chunked kinds: the
    /// decoded bytes. Always empty once discarded.
    pub payload: Vec<u8>,
    pub state: TxState,
    pub diagnostic: Option<String>,
}

impl Transaction {
    fn open(kind: TransactionKind) -> Self {
        Self {
            kind,
            payload: Vec::new(),
            state: TxState::Open,
            diagnostic: None,
        }
    }

    fn discard(mut self, why: impl Into<String>) -> Self {
        self.payload = Vec::new();
        self.state = TxState::Discarded;
        self.diagnostic = Some(why.into());
        self
    }
}

/// What feeding an event to the assembler produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Assembled {
    /// The event belongs to the open transaction (or opened one).
    Consumed,
    /// The event ended a transaction, successfully or not.
    Finished(Transaction),
    /// A new start sentinel arrived while another transaction was open: the
    /// old one is discarded and the new one is now open.
    Replaced(Transaction),
    /// The event is not part of any transaction.
    Passthrough(DeviceEvent),
}

#[derive(Debug)]
pub struct Assembler {
    open: Option<Transaction>,
    /// Set after a transaction was discarded for bad data, so its remaining
    /// lines are swallowed instead of being reported as stray.
    draining: Option<TransactionKind>,
    last_activity: Instant,
    timeout: Duration,
}

impl Default for Assembler {
    fn default() -> Self {
        Self::new(DEFAULT_TRANSACTION_TIMEOUT)
    }
}

impl Assembler {
    pub fn new(timeout: Duration) -> Self {
        Self {
            open: None,
            draining: None,
            last_activity: Instant::now(),
            timeout,
        }
    }

    pub fn is_open(&self) -> bool {
        self.open.is_some()
    }

    pub fn open_kind(&self) -> Option<TransactionKind> {
        self.open.as_ref().map(|t| t.kind)
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn feed(&mut self, event: DeviceEvent, now: Instant) -> Assembled {
        match event {
            DeviceEvent::TransactionStart(kind) => {
                self.last_activity = now;
                self.draining = None;
                match self.open.replace(Transaction::open(kind)) {
                    Some(old) => {
                        let why = format!("{} interrupted by {}", old.kind.start_sentinel(), kind.start_sentinel());
                        Assembled::Replaced(old.discard(why))
                    }
                    None => Assembled::Consumed,
                }
            }
            DeviceEvent::PayloadLine(kind, data) => {
                if self.draining == Some(kind) {
                    return Assembled::Consumed;
                }
                let Some(tx) = self.open.as_mut().filter(|t| t.kind == kind) else {
                    if self.open.is_some() {
                        let old = self.open.take().expect("open");
                        return Assembled::Finished(old.discard(format!(
                            "unexpected {} line inside {}",
                            kind.payload_prefix(),
                            kind.start_sentinel()
                        )));
                    }
                    return Assembled::Passthrough(DeviceEvent::PayloadLine(kind, data));
                };
                self.last_activity = now;
                if kind.is_chunked() {
                    match B64.decode(data.as_bytes()) {
                        Ok(bytes) => tx.payload.extend_from_slice(&bytes),
                        Err(e) => {
                            let old = self.open.take().expect("open");
                            self.draining = Some(kind);
                            return Assembled::Finished(old.discard(format!("invalid base64 chunk: {e}")));
                        }
                    }
                } else {
                    tx.payload.extend_from_slice(data.as_bytes());
                    tx.payload.push(b'\n');
                }
                Assembled::Consumed
            }
            DeviceEvent::TransactionEnd(kind) => {
                if self.draining == Some(kind) {
                    self.draining = None;
                    return Assembled::Consumed;
                }
                match self.open.take() {
                    Some(mut tx) if tx.kind == kind => {
                        tx.state = TxState::Complete;
                        Assembled::Finished(tx)
                    }
                    Some(tx) => {
                        let why = format!("{} closed by {}", tx.kind.start_sentinel(), kind.end_sentinel());
                        Assembled::Finished(tx.discard(why))
                    }
                    None => Assembled::Passthrough(DeviceEvent::TransactionEnd(kind)),
                }
            }
            other => Assembled::Passthrough(other),
        }
    }

    /// Discards the open transaction if no line arrived within the timeout.
    pub fn poll_timeout(&mut self, now: Instant) -> Option<Transaction> {
        if self.open.is_some() && now.duration_since(self.last_activity) >= self.timeout {
            let tx = self.open.take().expect("open");
            return Some(tx.discard(format!("no line for {:?}", self.timeout)));
        }
        None
    }

    /// Discards the open transaction because the link went away.
    pub fn disconnect(&mut self) -> Option<Transaction> {
        self.draining = None;
        self.open.take().map(|tx| tx.discard("connection closed"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::event::parse_line;

    fn feed_all(a: &mut Assembler, lines: &[&str]) -> Vec<Assembled> {
        let now = Instant::now();
        lines.iter().map(|l| a.feed(parse_line(l), now)).collect()
    }

    #[test]
    fn two_chunks() {
        let mut a = Assembler::default();
        let out = feed_all(&mut a, &["SD_JPEG_START", "SD_JPEG:AFWq", "SD_JPEG:/w==", "SD_JPEG_END"]);
        match out.last().unwrap() {
            Assembled::Finished(tx) => {
                assert_eq!(tx.state, TxState::Complete);
                assert_eq!(tx.payload, vec![0x00, 0x55, 0xAA, 0xFF]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn restart_discards() {
        let mut a = Assembler::default();
        let out = feed_all(&mut a, &["CAM_JPEG_START", "CAM_JPEG:AAAA", "CAM_JPEG_START"]);
        match &out[2] {
            Assembled::Replaced(tx) => {
                assert_eq!(tx.state, TxState::Discarded);
                assert!(tx.payload.is_empty());
            }
            other => panic!("{other:?}"),
        }
        assert!(a.is_open());
    }

    #[test]
    fn empty_transaction_completes() {
        let mut a = Assembler::default();
        let out = feed_all(&mut a, &["SD_CONTENT_START", "SD_CONTENT_END"]);
        assert_eq!(
            out[1],
            Assembled::Finished(Transaction {
                kind: TransactionKind::TextRead,
                payload: vec![],
                state: TxState::Complete,
                diagnostic: None
            })
        );
    }

    #[test]
    fn text_lines_joined() {
        let mut a = Assembler::default();
        let out = feed_all(&mut a, &["SD_CONTENT_START", "SD_LINE:{", "SD_LINE:}", "SD_CONTENT_END"]);
        let Assembled::Finished(tx) = &out[3] else { panic!() };
        assert_eq!(tx.payload, b"{\n}\n");
    }

    #[test]
    fn bad_base64_discards_and_drains() {
        let mut a = Assembler::default();
        let out = feed_all(&mut a, &["SD_JPEG_START", "SD_JPEG:@@@", "SD_JPEG:AAAA", "SD_JPEG_END", "OK:x"]);
        assert!(matches!(&out[1], Assembled::Finished(tx) if tx.state == TxState::Discarded));
        assert_eq!(out[2], Assembled::Consumed);
        assert_eq!(out[3], Assembled::Consumed);
        assert_eq!(out[4], Assembled::Passthrough(DeviceEvent::Ok("x".into())));
    }

    #[test]
    fn timeout_and_disconnect() {
        let mut a = Assembler::new(Duration::from_millis(100));
        let t0 = Instant::now();
        a.feed(parse_line("SD_LIST_START"), t0);
        assert!(a.poll_timeout(t0 + Duration::from_millis(50)).is_none());
        let tx = a.poll_timeout(t0 + Duration::from_millis(150)).unwrap();
        assert_eq!(tx.state, TxState::Discarded);
        a.feed(parse_line("SD_LIST_START"), t0);
        assert_eq!(a.disconnect().unwrap().state, TxState::Discarded);
        assert!(a.disconnect().is_none());
    }

    #[test]
    fn stray_lines_pass_through() {
        let mut a = Assembler::default();
        let out = feed_all(&mut a, &["SD_LIST_END", "SD_FILE:F:1:x", "HEATMAP:1x1:AA=="]);
        assert!(out.iter().all(|o| matches!(o, Assembled::Passthrough(_))));
    }

    #[test]
    fn mismatched_end_discards() {
        let mut a = Assembler::default();
        let out = feed_all(&mut a, &["SD_LIST_START", "SD_FILE:F:1:x", "SD_CONTENT_END"]);
        assert!(matches!(&out[2], Assembled::Finished(tx) if tx.state == TxState::Discarded));
    }
}
