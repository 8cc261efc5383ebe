//! Procedural stand-in for captured photos: each class is a coloured,
//! textured patch at a random position over a noisy grey background.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rgb_to_tensor, DatasetError, LabeledImage, ProjectFolder};
use crate::codec::TrainConfig;

fn class_color(class: usize) -> [f32; 3] {
    const BASE: [[f32; 3]; 6] = [
        [0.85, 0.20, 0.20],
        [0.20, 0.80, 0.30],
        [0.20, 0.30, 0.90],
        [0.90, 0.80, 0.20],
        [0.80, 0.25, 0.85],
        [0.20, 0.85, 0.85],
    ];
    BASE[class % BASE.len()]
}

/// Texture multiplier for a class at pixel (x, y): horizontal stripes,
/// vertical stripes or a checkerboard.
fn texture(class: usize, x: i64, y: i64) -> f32 {
    let on = match class % 3 {
        0 => (y / 3) % 2 == 0,
        1 => (x / 3) % 2 == 0,
        _ => ((x / 4) + (y / 4)) % 2 == 0,
    };
    if on {
        1.15
    } else {
        0.8
    }
}

pub fn generate_image(class: usize, side: u32, rng: &mut impl Rng) -> RgbImage {
    let s = side as i64;
    let background: f32 = rng.gen_range(0.35..0.65);
    let half = rng.gen_range(s / 5..=s / 3).max(2);
    let cx = rng.gen_range(half..=s - half);
    let cy = rng.gen_range(half..=s - half);
    let color = class_color(class);
    RgbImage::from_fn(side, side, |x, y| {
        let (x, y) = (x as i64, y as i64);
        let inside = (x - cx).abs() < half && (y - cy).abs() < half;
        let px = if inside {
            let t = texture(class, x, y);
            color.map(|c| c * t)
        } else {
            [background; 3]
        };
        Rgb(px.map(|c| {
            let noisy = c + rng.gen_range(-0.06..0.06);
            (noisy.clamp(0.0, 1.0) * 255.0).round() as u8
        }))
    })
}

/// `per_class` images for each class, grouped by class.
pub fn generate(num_classes: usize, per_class: usize, side: u32, seed: u64) -> Vec<(usize, RgbImage)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_classes)
        .flat_map(|c| (0..per_class).map(move |_| c))
        .map(|c| (c, generate_image(c, side, &mut rng)))
        .collect()
}

pub fn generate_dataset(
    num_classes: usize,
    per_class: usize,
    side: u32,
    grayscale: bool,
    seed: u64,
) -> Vec<LabeledImage> {
    generate(num_classes, per_class, side, seed)
        .into_iter()
        .map(|(class_index, img)| LabeledImage {
            class_index,
            pixels: rgb_to_tensor(&img, grayscale),
            source: None,
        })
        .collect()
}

/// Creates a project folder populated with synthetic PNG images.
pub fn write_project(
    root: &Path,
    config: &TrainConfig,
    per_class: usize,
    seed: u64,
) -> Result<ProjectFolder, DatasetError> {
    let project = ProjectFolder::init(root, config)?;
    let images = generate(config.class_labels.len(), per_class, config.input_size as u32, seed);
    for (i, (class, img)) in images.into_iter().enumerate() {
        let path = root
            .join(&config.class_labels[class])
            .join(format!("synth_{:04}.png", i % per_class.max(1) + 1));
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| DatasetError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        img.save(&path)?;
    }
    Ok(project)
}
