//! Where the device lives: a serial port, a TCP socket (usually a simulator
//! started with `tinyvis sim`), or an in-process simulator over a project
//! folder.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::thread::JoinHandle;
use std::time::Duration;

use anyhow::{bail, Context};
use tinyvis_core::dataset::HEADER_DIR;
use tinyvis_core::protocol::transport::Connection;
use tinyvis_core::protocol::{DeviceClient, BAUD_RATE};
use tinyvis_core::sim::{spawn_in_memory, Camera, SimOptions, VirtualDevice};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Serial(String),
    Tcp(String),
    Sim(PathBuf),
}

impl FromStr for Endpoint {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        if let Some(port) = s.strip_prefix("serial:") {
            Ok(Endpoint::Serial(port.to_string()))
        } else if let Some(addr) = s.strip_prefix("tcp:") {
            if !addr.contains(':') {
                bail!("tcp endpoint needs host:port, got {addr:?}");
            }
            Ok(Endpoint::Tcp(addr.to_string()))
        } else if let Some(root) = s.strip_prefix("sim:") {
            Ok(Endpoint::Sim(PathBuf::from(root)))
        } else if s.starts_with("/dev/") || s.starts_with("COM") {
            Ok(Endpoint::Serial(s.to_string()))
        } else {
            bail!("unknown endpoint {s:?}; use serial:<port>, tcp:<host>:<port> or sim:<dir>")
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Serial(p) => write!(f, "serial:{p}"),
            Endpoint::Tcp(a) => write!(f, "tcp:{a}"),
            Endpoint::Sim(r) => write!(f, "sim:{}", r.display()),
        }
    }
}

/// Every image in the class folders under `root` (everything but `header/`),
/// folder by folder in name order.
pub fn playback_camera(root: &Path) -> Camera {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect())
        .unwrap_or_default();
    dirs.retain(|d| d.file_name().is_some_and(|n| n != HEADER_DIR && !n.to_string_lossy().starts_with('.')));
    dirs.sort();
    let mut files = Vec::new();
    for d in dirs {
        let mut inner: Vec<PathBuf> = fs::read_dir(&d)
            .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect())
            .unwrap_or_default();
        inner.sort();
        files.extend(inner);
    }
    Camera::from_files(files)
}

/// An open link. Keeps the in-process simulator thread (if any) alive for
/// as long as the connection is in use.
pub struct Link {
    pub conn: Connection,
    pub sim: Option<JoinHandle<io::Result<()>>>,
}

impl Endpoint {
    pub fn open(&self) -> anyhow::Result<Link> {
        match self {
            Endpoint::Serial(port) => {
                let port = serialport::new(port, BAUD_RATE)
                    .timeout(Duration::from_millis(100))
                    .open()
                    .with_context(|| format!("opening serial port {port}"))?;
                let reader = port.try_clone().context("cloning serial port")?;
                Ok(Link { conn: Connection::new(reader, port), sim: None })
            }
            Endpoint::Tcp(addr) => {
                let conn = Connection::tcp(addr.as_str()).with_context(|| format!("connecting to {addr}"))?;
                Ok(Link { conn, sim: None })
            }
            Endpoint::Sim(root) => {
                fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
                let device = VirtualDevice::new(root, playback_camera(root))
                    .with_context(|| format!("simulator root {}", root.display()))?;
                let (conn, handle) = spawn_in_memory(device, SimOptions::default());
                Ok(Link { conn, sim: Some(handle) })
            }
        }
    }

    pub fn client(&self) -> anyhow::Result<DeviceClient> {
        let link = self.open()?;
        // the simulator thread exits on its own once the client hangs up
        drop(link.sim);
        Ok(DeviceClient::new(link.conn))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_endpoints() {
        assert_eq!("tcp:127.0.0.1:7000".parse::<Endpoint>().unwrap(), Endpoint::Tcp("127.0.0.1:7000".into()));
        assert_eq!("/dev/ttyUSB0".parse::<Endpoint>().unwrap(), Endpoint::Serial("/dev/ttyUSB0".into()));
        assert_eq!("sim:/tmp/x".parse::<Endpoint>().unwrap(), Endpoint::Sim("/tmp/x".into()));
        assert!("tcp:nohost".parse::<Endpoint>().is_err());
        assert!("bogus".parse::<Endpoint>().is_err());
        let e: Endpoint = "serial:/dev/ttyACM0".parse().unwrap();
        assert_eq!(e.to_string(), "serial:/dev/ttyACM0");
    }
}
