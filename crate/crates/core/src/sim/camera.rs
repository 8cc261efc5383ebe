//! Image-playback camera: frames come from a directory (sorted by name) or
//! from memory, in a loop.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::DynamicImage;

#[derive(Debug, Clone)]
enum Source {
    Files(Vec<PathBuf>),
    Frames(Vec<DynamicImage>),
}

#[derive(Debug, Clone)]
pub struct Camera {
    source: Source,
    next: usize,
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("jpg" | "jpeg" | "png")
    )
}

impl Camera {
    pub fn none() -> Self {
        Self::from_frames(Vec::new())
    }

    pub fn from_frames(frames: Vec<DynamicImage>) -> Self {
        Self {
            source: Source::Frames(frames),
            next: 0,
        }
    }

    /// JPEG/PNG files directly inside `dir`, in name order.
    pub fn from_dir(dir: &Path) -> io::Result<Self> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        files.sort();
        Ok(Self {
            source: Source::Files(files),
            next: 0,
        })
    }

    /// Plays `files` in the given order.
    pub fn from_files(files: Vec<PathBuf>) -> Self {
        Self {
            source: Source::Files(files.into_iter().filter(|p| is_image(p)).collect()),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        match &self.source {
            Source::Files(f) => f.len(),
            Source::Frames(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Next frame, wrapping around. Unreadable files are skipped with a
    /// warning; `None` when no frame can be produced.
    pub fn next_frame(&mut self) -> Option<DynamicImage> {
        for _ in 0..self.len() {
            let i = self.next;
            self.next = (self.next + 1) % self.len();
            match &self.source {
                Source::Frames(f) => return Some(f[i].clone()),
                Source::Files(f) => match image::open(&f[i]) {
                    Ok(img) => return Some(img),
                    Err(e) => log::warn!("camera: skipping {}: {e}", f[i].display()),
                },
            }
        }
        None
    }
}
