//! Final-pixel conversion to the display color format, plus the stock
//! exposure/gamma tone map pixel operation.

use alloc::vec::Vec;

use crate::tile::ColorFormat;

/// Convert premultiplied RGBA floats (`4 * area` values) to display bytes.
///
/// RGBA8 stores `round(clamp(c, 0, 1) * 255)` per channel, RGBAF32 the raw
/// little-endian float bits, and NONE nothing at all.
pub fn encode_display_pixels(color: &[f32], format: ColorFormat) -> Vec<u8> {
    match format {
        ColorFormat::Rgba8 => color
            .iter()
            .map(|&c| libm::roundf(c.clamp(0.0, 1.0) * 255.0) as u8)
            .collect(),
        ColorFormat::RgbaF32 => {
            let mut out = Vec::with_capacity(color.len() * 4);
            for &c in color {
                out.extend_from_slice(&c.to_le_bytes());
            }
            out
        }
        ColorFormat::None => Vec::new(),
    }
}

/// Exposure/gamma tone map: `out = (exposure * in)^(1/gamma)` on the color
/// channels, alpha untouched.
#[derive(Debug, Clone, Copy)]
pub struct ToneMapParams {
    pub exposure: f32,
    pub gamma: f32,
}

impl Default for ToneMapParams {
    fn default() -> Self {
        ToneMapParams {
            exposure: 1.0,
            gamma: 2.2,
        }
    }
}

pub fn tone_map(color: &mut [f32], params: ToneMapParams) {
    let inv_gamma = 1.0 / params.gamma;
    for px in color.chunks_exact_mut(4) {
        for c in &mut px[..3] {
            *c = libm::powf((params.exposure * *c).max(0.0), inv_gamma);
        }
    }
}
