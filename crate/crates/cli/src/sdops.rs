//! The `sd` and `capture` verbs. Each is one protocol exchange through
//! [`DeviceClient`], so the bytes on the wire are exactly what the protocol
//! module encodes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use tinyvis_core::dataset::save_capture;
use tinyvis_core::protocol::{DeviceClient, SdEntry};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SdVerb {
    Ls(String),
    Cat(String),
    Get { path: String, out: Option<PathBuf> },
    Put { local: PathBuf, path: String },
    Rm(String),
    Rmdir(String),
}

pub fn format_entry(e: &SdEntry) -> String {
    if e.is_dir {
        format!("D {:>10}  {}/", "-", e.name)
    } else {
        format!("F {:>10}  {}", e.size, e.name)
    }
}

fn file_name(path: &str) -> &str {
    path.rsplit('/').find(|s| !s.is_empty()).unwrap_or("download.bin")
}

pub fn run_sd(client: &mut DeviceClient, verb: &SdVerb, out: &mut dyn Write) -> anyhow::Result<()> {
    match verb {
        SdVerb::Ls(path) => {
            for e in client.list(path)? {
                writeln!(out, "{}", format_entry(&e))?;
            }
        }
        SdVerb::Cat(path) => out.write_all(client.read_text(path)?.as_bytes())?,
        SdVerb::Get { path, out: dest } => {
            let bytes = client.read_file(path)?;
            let dest = dest.clone().unwrap_or_else(|| PathBuf::from(file_name(path)));
            fs::write(&dest, &bytes).with_context(|| format!("writing {}", dest.display()))?;
            writeln!(out, "{} bytes -> {}", bytes.len(), dest.display())?;
        }
        SdVerb::Put { local, path } => {
            let bytes = fs::read(local).with_context(|| format!("reading {}", local.display()))?;
            writeln!(out, "{}", client.write_file(path, &bytes)?)?;
        }
        SdVerb::Rm(path) => writeln!(out, "{}", client.delete(path)?)?,
        SdVerb::Rmdir(path) => writeln!(out, "{}", client.rmdir(path)?)?,
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaptureSize {
    pub width: u32,
    pub height: u32,
    pub quality: u8,
}

impl Default for CaptureSize {
    fn default() -> Self {
        Self { width: 320, height: 240, quality: 12 }
    }
}

/// Issues `count` camera captures and files each under `<project>/<label>/`.
pub fn capture_from_device(
    client: &mut DeviceClient,
    size: CaptureSize,
    count: usize,
    label: &str,
    project: &Path,
    labels: &[String],
) -> anyhow::Result<Vec<PathBuf>> {
    let mut saved = Vec::with_capacity(count);
    for _ in 0..count {
        let jpeg = client.capture(size.width, size.height, size.quality)?;
        saved.push(save_capture(&jpeg, label, project, labels)?);
    }
    Ok(saved)
}

/// Copies up to `count` images from `dir` (name order) into the class folder.
pub fn capture_from_dir(
    dir: &Path,
    count: usize,
    label: &str,
    project: &Path,
    labels: &[String],
) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png"))
        })
        .collect();
    files.sort();
    files
        .iter()
        .take(count)
        .map(|f| {
            let bytes = fs::read(f).with_context(|| format!("reading {}", f.display()))?;
            Ok(save_capture(&bytes, label, project, labels)?)
        })
        .collect()
}
