use crate::tensor::Tensor;

/// Per-cell maximum over filters: `R×C×F` → `R×C`.
pub fn conv2_heatmap(activation: &Tensor) -> Tensor {
    assert_eq!(activation.rank(), 3, "heatmap input must be R×C×F");
    let (rows, cols, filters) = (activation.shape()[0], activation.shape()[1], activation.shape()[2]);
    let data = activation
        .data()
        .chunks_exact(filters)
        .map(|cell| cell.iter().copied().fold(f32::NEG_INFINITY, f32::max))
        .collect();
    Tensor::new(&[rows, cols], data).expect("finite input")
}

/// Per-frame min-max scaling to 0..=255, row-major. A constant frame maps to
/// all zeros.
pub fn quantize_heatmap(map: &Tensor) -> Vec<u8> {
    let data = map.data();
    let (lo, hi) = data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0; data.len()];
    }
    data.iter()
        .map(|&v| (((v - lo) / range) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}
