//! Byte links between host and device: an in-memory duplex pipe for tests
//! and in-process simulation, TCP, and a line-reader thread that turns any
//! byte stream into received lines.

use std::collections::VecDeque;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;

/// One side of a bidirectional byte link.
pub struct Connection {
    pub reader: Box<dyn Read + Send>,
    pub writer: Box<dyn Write + Send>,
}

impl Connection {
    pub fn new(reader: impl Read + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        Self {
            reader: Box::new(reader),
            writer: Box::new(writer),
        }
    }

    pub fn tcp(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Self::from_tcp(stream)
    }

    pub fn from_tcp(stream: TcpStream) -> io::Result<Self> {
        let reader = stream.try_clone()?;
        Ok(Self::new(reader, stream))
    }
}

#[derive(Default)]
struct PipeState {
    buf: VecDeque<u8>,
    closed: bool,
}

#[derive(Default)]
struct Shared {
    state: Mutex<PipeState>,
    ready: Condvar,
}

/// Read half of a one-way pipe. Blocks until data arrives; returns EOF once
/// the writer is dropped and the buffer drained.
pub struct PipeReader(Arc<Shared>);

/// Write half of a one-way pipe. Dropping it closes the pipe.
pub struct PipeWriter(Arc<Shared>);

pub fn pipe() -> (PipeWriter, PipeReader) {
    let shared = Arc::new(Shared::default());
    (PipeWriter(shared.clone()), PipeReader(shared))
}

/// Two connected ends: bytes written on one are read on the other.
pub fn duplex() -> (Connection, Connection) {
    let (aw, br) = pipe();
    let (bw, ar) = pipe();
    (Connection::new(ar, aw), Connection::new(br, bw))
}

impl Read for PipeReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if out.is_empty() {
            return Ok(0);
        }
        let mut st = self.0.state.lock().expect("pipe lock");
        while st.buf.is_empty() && !st.closed {
            st = self.0.ready.wait(st).expect("pipe lock");
        }
        let n = out.len().min(st.buf.len());
        for (dst, src) in out.iter_mut().zip(st.buf.drain(..n)) {
            *dst = src;
        }
        Ok(n)
    }
}

impl Write for PipeWriter {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        let mut st = self.0.state.lock().expect("pipe lock");
        if st.closed {
            return Err(io::Error::new(io::ErrorKind::BrokenPipe, "pipe closed"));
        }
        st.buf.extend(data);
        self.0.ready.notify_all();
        Ok(data.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Drop for PipeWriter {
    fn drop(&mut self) {
        if let Ok(mut st) = self.0.state.lock() {
            st.closed = true;
        }
        self.0.ready.notify_all();
    }
}

impl Drop for PipeReader {
    fn drop(&mut self) {
        // writers see BrokenPipe instead of filling a buffer nobody reads
        if let Ok(mut st) = self.0.state.lock() {
            st.closed = true;
            st.buf.clear();
        }
    }
}

/// Splits a byte stream into lines on a background thread. Invalid UTF-8 is
/// replaced rather than dropped; a trailing `\r` is kept for the parser to
/// strip. The channel closes at EOF or on a fatal read error. Read timeouts
/// (as serial ports report them) are retried.
pub fn spawn_line_reader(reader: Box<dyn Read + Send>) -> Receiver<String> {
    let (tx, rx) = mpsc::channel();
    thread::Builder::new()
        .name("line-reader".into())
        .spawn(move || {
            let mut reader = BufReader::new(reader);
            let mut line = Vec::new();
            loop {
                match reader.read_until(b'\n', &mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if line.last() != Some(&b'\n') {
                            // EOF mid-line: an unterminated line is not a line
                            break;
                        }
                        line.pop();
                        let text = String::from_utf8_lossy(&line).into_owned();
                        line.clear();
                        if tx.send(text).is_err() {
                            break;
                        }
                    }
                    Err(e) if matches!(e.kind(), io::ErrorKind::TimedOut | io::ErrorKind::Interrupted | io::ErrorKind::WouldBlock) => {}
                    Err(e) => {
                        log::debug!("line reader stopped: {e}");
                        break;
                    }
                }
            }
        })
        .expect("spawn line reader");
    rx
}

/// Writer that copies every byte into a shared log; used for wire
/// transcripts.
pub struct TeeWriter<W> {
    inner: W,
    log: Arc<Mutex<Vec<u8>>>,
}

impl<W: Write> TeeWriter<W> {
    pub fn new(inner: W) -> (Self, Arc<Mutex<Vec<u8>>>) {
        let log = Arc::new(Mutex::new(Vec::new()));
        (
            Self {
                inner,
                log: log.clone(),
            },
            log,
        )
    }
}

impl<W: Write> Write for TeeWriter<W> {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(data)?;
        self.log.lock().expect("tee lock").extend_from_slice(&data[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}
