//! Project folders, image ingestion and train/validation splits.
//!
//! A project mirrors the SD card:
//!
//! ```text
//! <root>/
//!   header/config.json
//!   header/myWeights.bin
//!   header/myWeights.h
//!   <classLabel>/img_0001.jpg ...
//! ```

mod split;
pub mod synthetic;

pub use split::{split, SplitMode, SplitSpec};

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, ImageFormat, RgbImage};
use rayon::prelude::*;
use thiserror::Error;

use crate::codec::{emit_config, parse_config, CodecError, TrainConfig};
use crate::tensor::Tensor;

pub const HEADER_DIR: &str = "header";
pub const CONFIG_FILE: &str = "config.json";
pub const C_HEADER_FILE: &str = "myWeights.h";
const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Config(#[from] CodecError),
    #[error("class folder {0} is missing")]
    MissingClass(PathBuf),
    #[error("class {0:?} has no usable images")]
    EmptyClass(String),
    #[error("unknown class label {label:?}; valid labels: {valid:?}")]
    UnknownLabel { label: String, valid: Vec<String> },
    #[error("class {label:?} has {available} images, cannot hold out {requested}")]
    HoldoutTooLarge {
        label: String,
        available: usize,
        requested: usize,
    },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub class_index: usize,
    /// `S×S×C`, values in [0, 1].
    pub pixels: Tensor,
    pub source: Option<PathBuf>,
}

/// Resizes to `size×size` (bilinear), scales to [0, 1] and optionally
/// reduces to luminance `0.299r + 0.587g + 0.114b`.
pub fn image_to_tensor(img: &DynamicImage, size: usize, grayscale: bool) -> Tensor {
    let rgb = img.to_rgb8();
    let rgb = if rgb.width() as usize == size && rgb.height() as usize == size {
        rgb
    } else {
        image::imageops::resize(&rgb, size as u32, size as u32, FilterType::Triangle)
    };
    rgb_to_tensor(&rgb, grayscale)
}

pub fn rgb_to_tensor(rgb: &RgbImage, grayscale: bool) -> Tensor {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let channels = if grayscale { 1 } else { 3 };
    let mut data = Vec::with_capacity(w * h * channels);
    for p in rgb.pixels() {
        let [r, g, b] = p.0.map(|v| v as f32 / 255.0);
        if grayscale {
            data.push(0.299 * r + 0.587 * g + 0.114 * b);
        } else {
            data.extend_from_slice(&[r, g, b]);
        }
    }
    Tensor::new(&[h, w, channels], data).expect("pixel values are finite")
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub images: Vec<LabeledImage>,
    /// Files that could not be decoded, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl IngestReport {
    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for img in &self.images {
            counts[img.class_index] += 1;
        }
        counts
    }
}

fn sorted_image_files(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && has_image_extension(p))
        .collect();
    files.sort();
    Ok(files)
}

fn has_image_extension(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Loads every image under `<root>/<classLabel>/`, in sorted order.
pub fn ingest(root: &Path, config: &TrainConfig) -> Result<IngestReport, DatasetError> {
    let mut jobs = Vec::new();
    for (class_index, label) in config.class_labels.iter().enumerate() {
        let dir = root.join(label);
        if !dir.is_dir() {
            return Err(DatasetError::MissingClass(dir));
        }
        jobs.extend(sorted_image_files(&dir)?.into_iter().map(|p| (class_index, p)));
    }
    let decoded: Vec<_> = jobs
        .into_par_iter()
        .map(|(class_index, path)| {
            let result = image::open(&path)
                .map(|img| image_to_tensor(&img, config.input_size, config.use_grayscale));
            (class_index, path, result)
        })
        .collect();

    let mut report = IngestReport::default();
    for (class_index, path, result) in decoded {
        match result {
            Ok(pixels) => report.images.push(LabeledImage {
                class_index,
                pixels,
                source: Some(path),
            }),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                report.skipped.push((path, e.to_string()));
            }
        }
    }
    let counts = report.class_counts(config.class_labels.len());
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(DatasetError::EmptyClass(config.class_labels[empty].clone()));
    }
    Ok(report)
}

/// A project directory laid out like the SD card root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectFolder {
    pub root: PathBuf,
}

impl ProjectFolder {
    pub fn open(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Creates `header/config.json` and one folder per class.
    pub fn init(root: impl Into<PathBuf>, config: &TrainConfig) -> Result<Self, DatasetError> {
        config.validate()?;
        let project = Self::open(root);
        let header = project.header_dir();
        fs::create_dir_all(&header).map_err(io_err(&header))?;
        for label in &config.class_labels {
            let dir = project.root.join(label);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        project.save_config(config)?;
        Ok(project)
    }

    pub fn header_dir(&self) -> PathBuf {
        self.root.join(HEADER_DIR)
    }

    pub fn config_path(&self) -> PathBuf {
        self.header_dir().join(CONFIG_FILE)
    }

    pub fn weights_path(&self, config: &TrainConfig) -> PathBuf {
        self.header_dir().join(&config.weights_file)
    }

    pub fn c_header_path(&self) -> PathBuf {
        self.header_dir().join(C_HEADER_FILE)
    }

    pub fn load_config(&self) -> Result<TrainConfig, DatasetError> {
        let path = self.config_path();
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(parse_config(&text)?)
    }

    pub fn save_config(&self, config: &TrainConfig) -> Result<(), DatasetError> {
        config.validate()?;
        let path = self.config_path();
        let dir = self.header_dir();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        fs::write(&path, emit_config(config)).map_err(io_err(&path))
    }

    /// Number of image files in each class folder (missing folders count 0).
    pub fn class_counts(&self, config: &TrainConfig) -> Vec<usize> {
        config
            .class_labels
            .iter()
            .map(|l| sorted_image_files(&self.root.join(l)).map(|f| f.len()).unwrap_or(0))
            .collect()
    }
}

fn capture_number(name: &str) -> Option<u32> {
    name.strip_prefix("img_")?.strip_suffix(".jpg")?.parse().ok()
}

/// Stores a captured frame as `<root>/<label>/img_NNNN.jpg`, continuing from
/// the highest existing number. Non-JPEG input is re-encoded.
pub fn save_capture(
    image_bytes: &[u8],
    label: &str,
    root: &Path,
    class_labels: &[String],
) -> Result<PathBuf, DatasetError> {
    if !class_labels.iter().any(|l| l == label) {
        return Err(DatasetError::UnknownLabel {
            label: label.to_string(),
            valid: class_labels.to_vec(),
        });
    }
    let dir = root.join(label);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let next = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| capture_number(&e.file_name().to_string_lossy()))
        .max()
        .unwrap_or(0)
        + 1;
    let path = dir.join(format!("img_{next:04}.jpg"));
    let is_jpeg = image_bytes.starts_with(&[0xFF, 0xD8]);
    if is_jpeg {
        fs::write(&path, image_bytes).map_err(io_err(&path))?;
    } else {
        let img = image::load_from_memory(image_bytes)?;
        img.to_rgb8().save_with_format(&path, ImageFormat::Jpeg)?;
    }
    Ok(path)
}
