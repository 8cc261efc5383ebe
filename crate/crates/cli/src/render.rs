//! Heatmap rendering and the input-size hint.

use image::{Rgb, RgbImage};
use tinyvis_core::model::ModelSpec;
use tinyvis_core::protocol::{colormap, HeatmapFrame};

/// On-screen magnification of heatmap cells.
pub const DISPLAY_SCALE: u32 = 6;

pub fn frame_rgb(frame: &HeatmapFrame) -> Vec<[u8; 3]> {
    frame.bytes.iter().map(|&b| colormap(b)).collect()
}

/// Nearest-neighbour upscale by `scale`.
pub fn frame_image(frame: &HeatmapFrame, scale: u32) -> RgbImage {
    let cols = frame.cols as u32;
    RgbImage::from_fn(cols * scale, frame.rows as u32 * scale, |x, y| {
        let i = (y / scale * cols + x / scale) as usize;
        Rgb(colormap(frame.bytes[i]))
    })
}

/// Truecolor ANSI blocks, two columns per cell so cells look square.
pub fn frame_ansi(frame: &HeatmapFrame) -> String {
    let mut out = String::new();
    for row in frame.bytes.chunks(frame.cols) {
        for &b in row {
            let [r, g, bl] = colormap(b);
            out.push_str(&format!("\x1b[48;2;{r};{g};{bl}m  "));
        }
        out.push_str("\x1b[0m\n");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SizeHint {
    pub input_size: usize,
    pub conv1_side: usize,
    pub pool_side: usize,
    pub conv2_side: usize,
    pub flatten: usize,
    pub params: usize,
}

pub fn size_hint(input_size: usize, grayscale: bool, num_classes: usize) -> anyhow::Result<SizeHint> {
    let spec = ModelSpec::new(input_size, grayscale, num_classes);
    spec.validate()?;
    Ok(SizeHint {
        input_size,
        conv1_side: spec.conv1_side(),
        pool_side: spec.pool_side(),
        conv2_side: spec.conv2_side(),
        flatten: spec.flatten_len(),
        params: spec.param_count(),
    })
}
