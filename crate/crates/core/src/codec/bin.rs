//! `myWeights.bin`: a sentinel-bounded ASCII JSON header followed by the six
//! weight arrays as little-endian float32 in device order.
//!
//! ```text
//! ===WEIGHTS_HEADER_BEGIN===\n
//! {"version":1,"inputSize":64,...}\n
//! ===WEIGHTS_HEADER_END===\n
//! conv1_w conv1_b conv2_w conv2_b dense_w dense_b
//! ```

use serde::{Deserialize, Serialize};

use super::transpose;
use super::CodecError;
use crate::model::{ModelSpec, ModelWeights};

pub const DEFAULT_BEGIN_SENTINEL: &str = "===WEIGHTS_HEADER_BEGIN===";
pub const DEFAULT_END_SENTINEL: &str = "===WEIGHTS_HEADER_END===";
pub const HEADER_VERSION: u32 = 1;

/// Sentinel literals bounding the JSON header. They must match the firmware
/// build that reads the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinFormat {
    pub begin: String,
    pub end: String,
}

impl Default for BinFormat {
    fn default() -> Self {
        Self {
            begin: DEFAULT_BEGIN_SENTINEL.into(),
            end: DEFAULT_END_SENTINEL.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HeaderMeta {
    pub version: u32,
    pub input_size: usize,
    pub num_classes: usize,
    pub class_labels: Vec<String>,
    pub grayscale: bool,
    pub f1: usize,
    pub f2: usize,
    pub conv2_out: usize,
}

impl HeaderMeta {
    pub fn for_spec(spec: &ModelSpec, class_labels: Vec<String>) -> Self {
        Self {
            version: HEADER_VERSION,
            input_size: spec.input_size,
            num_classes: spec.num_classes,
            class_labels,
            grayscale: spec.grayscale(),
            f1: spec.f1,
            f2: spec.f2,
            conv2_out: spec.conv2_side(),
        }
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            input_size: self.input_size,
            channels: if self.grayscale { 1 } else { 3 },
            f1: self.f1,
            f2: self.f2,
            num_classes: self.num_classes,
        }
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.num_classes != self.class_labels.len() {
            return Err(CodecError::MalformedHeader(format!(
                "numClasses is {} but {} class labels are listed",
                self.num_classes,
                self.class_labels.len()
            )));
        }
        let spec = self.spec();
        spec.validate()
            .map_err(|e| CodecError::MalformedHeader(e.to_string()))?;
        if spec.conv2_side() != self.conv2_out {
            return Err(CodecError::MalformedHeader(format!(
                "conv2Out {} inconsistent with inputSize {} (expected {})",
                self.conv2_out,
                self.input_size,
                spec.conv2_side()
            )));
        }
        Ok(())
    }

    /// Float counts of the six arrays in payload order.
    pub fn array_lens(&self) -> [usize; 6] {
        let s = self.spec();
        [
            9 * s.channels * s.f1,
            s.f1,
            9 * s.f1 * s.f2,
            s.f2,
            s.flatten_len() * s.num_classes,
            s.num_classes,
        ]
    }
}

/// Device-layout weights plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub meta: HeaderMeta,
    /// `[f, ky, kx, ic]`
    pub conv1: Vec<f32>,
    pub conv1_bias: Vec<f32>,
    /// `[f, ic, ky, kx]`
    pub conv2: Vec<f32>,
    pub conv2_bias: Vec<f32>,
    /// `[cls, f, y, x]`
    pub dense: Vec<f32>,
    pub dense_bias: Vec<f32>,
}

impl WeightBundle {
    pub fn from_model(weights: &ModelWeights, class_labels: Vec<String>) -> Result<Self, CodecError> {
        let spec = weights.spec;
        let meta = HeaderMeta::for_spec(&spec, class_labels);
        meta.validate()?;
        let side = spec.conv2_side();
        Ok(Self {
            conv1: transpose::conv1_to_device(&weights.conv1_w)?,
            conv1_bias: weights.conv1_b.data().to_vec(),
            conv2: transpose::conv2_to_device(&weights.conv2_w)?,
            conv2_bias: weights.conv2_b.data().to_vec(),
            dense: transpose::dense_to_device(&weights.dense_w, (side, side, spec.f2))?,
            dense_bias: weights.dense_b.data().to_vec(),
            meta,
        })
    }

    /// Applies the inverse transpositions.
    pub fn to_model(&self) -> Result<ModelWeights, CodecError> {
        self.check_lengths()?;
        let spec = self.meta.spec();
        let side = spec.conv2_side();
        let t = |data: &[f32], shape: &[usize]| crate::tensor::Tensor::new(shape, data.to_vec());
        Ok(ModelWeights {
            spec,
            conv1_w: transpose::conv1_from_device(&self.conv1, [3, 3, spec.channels, spec.f1])?,
            conv1_b: t(&self.conv1_bias, &[spec.f1])?,
            conv2_w: transpose::conv2_from_device(&self.conv2, [3, 3, spec.f1, spec.f2])?,
            conv2_b: t(&self.conv2_bias, &[spec.f2])?,
            dense_w: transpose::dense_from_device(&self.dense, (side, side, spec.f2), spec.num_classes)?,
            dense_b: t(&self.dense_bias, &[spec.num_classes])?,
        })
    }

    pub fn arrays(&self) -> [(&'static str, &[f32]); 6] {
        [
            ("conv1_w", &self.conv1),
            ("conv1_b", &self.conv1_bias),
            ("conv2_w", &self.conv2),
            ("conv2_b", &self.conv2_bias),
            ("dense_w", &self.dense),
            ("dense_b", &self.dense_bias),
        ]
    }

    pub fn float_count(&self) -> usize {
        self.arrays().iter().map(|(_, a)| a.len()).sum()
    }

    fn check_lengths(&self) -> Result<(), CodecError> {
        for ((name, arr), expected) in self.arrays().iter().zip(self.meta.array_lens()) {
            if arr.len() != expected {
                return Err(CodecError::Layout(format!(
                    "{name}: expected {expected} values, got {}",
                    arr.len()
                )));
            }
        }
        Ok(())
    }
}

/// Header bytes: both sentinel lines and the compact JSON line.
pub fn encode_header(meta: &HeaderMeta, format: &BinFormat) -> Vec<u8> {
    let json = serde_json::to_string(meta).expect("header serializes");
    format!("{}\n{}\n{}\n", format.begin, json, format.end).into_bytes()
}

pub fn encode_bin(bundle: &WeightBundle) -> Vec<u8> {
    encode_bin_with(bundle, &BinFormat::default())
}

pub fn encode_bin_with(bundle: &WeightBundle, format: &BinFormat) -> Vec<u8> {
    let mut out = encode_header(&bundle.meta, format);
    out.reserve(bundle.float_count() * 4);
    for (_, arr) in bundle.arrays() {
        for v in arr {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_bin(bytes: &[u8]) -> Result<WeightBundle, CodecError> {
    decode_bin_with(bytes, &BinFormat::default())
}

pub fn decode_bin_with(bytes: &[u8], format: &BinFormat) -> Result<WeightBundle, CodecError> {
    let begin = format!("{}\n", format.begin);
    let rest = bytes
        .strip_prefix(begin.as_bytes())
        .ok_or_else(|| CodecError::MalformedHeader("missing begin sentinel".into()))?;
    let end = format!("\n{}\n", format.end);
    let end_at = find(rest, end.as_bytes())
        .ok_or_else(|| CodecError::MalformedHeader("missing end sentinel".into()))?;
    let meta: HeaderMeta = serde_json::from_slice(&rest[..end_at])
        .map_err(|e| CodecError::MalformedHeader(format!("header JSON: {e}")))?;
    meta.validate()?;
    let payload = &rest[end_at + end.len()..];

    let lens = meta.array_lens();
    let expected: usize = lens.iter().sum::<usize>() * 4;
    if payload.len() < expected {
        return Err(CodecError::TruncatedWeights {
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(CodecError::TrailingData {
            extra: payload.len() - expected,
        });
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut take = |n: usize| -> Vec<f32> { floats.by_ref().take(n).collect() };
    Ok(WeightBundle {
        conv1: take(lens[0]),
        conv1_bias: take(lens[1]),
        conv2: take(lens[2]),
        conv2_bias: take(lens[3]),
        dense: take(lens[4]),
        dense_bias: take(lens[5]),
        meta,
    })
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}
