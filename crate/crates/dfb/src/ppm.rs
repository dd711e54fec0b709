//! Binary P6 PPM output (RGB, maxval 255, alpha dropped).

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::framebuffer::DisplayImage;

pub fn encode_ppm(width: u32, height: u32, rgba: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + (width * height * 3) as usize);
    out.extend_from_slice(format!("P6\n{width} {height}\n255\n").as_bytes());
    for px in rgba.chunks_exact(4) {
        out.extend_from_slice(&px[0..3]);
    }
    out
}

pub fn write_ppm(image: &DisplayImage, path: &Path) -> Result<()> {
    let (width, height, rgba) = image.to_rgba8();
    let bytes = encode_ppm(width, height, &rgba);
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pixel_header_and_payload() {
        let rgba = [255u8, 0, 0, 255, 0, 255, 0, 255];
        let bytes = encode_ppm(2, 1, &rgba);
        let mut expect = b"P6\n2 1\n255\n".to_vec();
        expect.extend_from_slice(&[0xFF, 0, 0, 0, 0xFF, 0]);
        assert_eq!(bytes, expect);
    }

    #[test]
    fn file_size_matches_header_plus_pixels() {
        let w = 7u32;
        let h = 5u32;
        let rgba = vec![128u8; (w * h * 4) as usize];
        let bytes = encode_ppm(w, h, &rgba);
        let header_len = format!("P6\n{w} {h}\n255\n").len();
        assert_eq!(bytes.len(), header_len + (3 * w * h) as usize);
    }
}
