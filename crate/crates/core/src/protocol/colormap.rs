//! Five-anchor blue → cyan → green → yellow → red ramp.

pub const ANCHORS: [[u8; 3]; 5] = [
    [0, 0, 255],
    [0, 255, 255],
    [0, 255, 0],
    [255, 255, 0],
    [255, 0, 0],
];

/// Byte value of each anchor: `round(255·k/4)`, so the four intervals are
/// equal up to one step and every anchor colour is hit exactly.
pub const ANCHOR_POSITIONS: [u8; 5] = [0, 64, 128, 191, 255];

/// Piecewise-linear interpolation between the anchors.
pub fn colormap(v: u8) -> [u8; 3] {
    let seg = ANCHOR_POSITIONS[1..4].iter().take_while(|&&p| v > p).count();
    let (lo, hi) = (ANCHOR_POSITIONS[seg], ANCHOR_POSITIONS[seg + 1]);
    let frac = (v - lo) as f32 / (hi - lo) as f32;
    let (a, b) = (ANCHORS[seg], ANCHORS[seg + 1]);
    [0, 1, 2].map(|i| (a[i] as f32 + (b[i] as f32 - a[i] as f32) * frac).round() as u8)
}

/// Row-major RGB triples for a frame of intensities.
pub fn colorize(bytes: &[u8]) -> Vec<[u8; 3]> {
    bytes.iter().map(|&b| colormap(b)).collect()
}
