//! Serialized tile layout carried inside message envelopes, little-endian:
//!
//! ```text
//! frameIndex u32 | tileID u32 | generation u32 | children u32 |
//! accumulationID u32 | regionX u16 | regionY u16 | regionW u16 | regionH u16 |
//! color f32 x 4 x area | depth f32 x area
//! ```

use alloc::vec::Vec;
use core::fmt;

use crate::tile::{PixelRect, Tile};

pub const TILE_HEADER_BYTES: usize = 5 * 4 + 4 * 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireError {
    Truncated { expected: usize, got: usize },
    EmptyRegion,
}

impl fmt::Display for WireError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WireError::Truncated { expected, got } => {
                write!(f, "tile payload truncated: expected {expected} bytes, got {got}")
            }
            WireError::EmptyRegion => write!(f, "tile region is empty"),
        }
    }
}

impl core::error::Error for WireError {}

pub fn encode_tile(tile: &Tile) -> Vec<u8> {
    let area = tile.region.area();
    let mut out = Vec::with_capacity(TILE_HEADER_BYTES + area * 20);
    out.extend_from_slice(&tile.frame_index.to_le_bytes());
    out.extend_from_slice(&tile.tile_id.to_le_bytes());
    out.extend_from_slice(&tile.generation.to_le_bytes());
    out.extend_from_slice(&tile.children.to_le_bytes());
    out.extend_from_slice(&tile.accumulation_id.to_le_bytes());
    out.extend_from_slice(&(tile.region.x as u16).to_le_bytes());
    out.extend_from_slice(&(tile.region.y as u16).to_le_bytes());
    out.extend_from_slice(&(tile.region.w as u16).to_le_bytes());
    out.extend_from_slice(&(tile.region.h as u16).to_le_bytes());
    for c in &tile.color {
        out.extend_from_slice(&c.to_le_bytes());
    }
    for d in &tile.depth {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

pub fn decode_tile(bytes: &[u8]) -> Result<Tile, WireError> {
    if bytes.len() < TILE_HEADER_BYTES {
        return Err(WireError::Truncated {
            expected: TILE_HEADER_BYTES,
            got: bytes.len(),
        });
    }
    let region = PixelRect {
        x: read_u16(bytes, 20) as u32,
        y: read_u16(bytes, 22) as u32,
        w: read_u16(bytes, 24) as u32,
        h: read_u16(bytes, 26) as u32,
    };
    let area = region.area();
    if area == 0 {
        return Err(WireError::EmptyRegion);
    }
    let expected = TILE_HEADER_BYTES + area * 20;
    if bytes.len() != expected {
        return Err(WireError::Truncated {
            expected,
            got: bytes.len(),
        });
    }
    let mut color = Vec::with_capacity(area * 4);
    let mut at = TILE_HEADER_BYTES;
    for _ in 0..area * 4 {
        color.push(f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]));
        at += 4;
    }
    let mut depth = Vec::with_capacity(area);
    for _ in 0..area {
        depth.push(f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]));
        at += 4;
    }
    Ok(Tile {
        frame_index: read_u32(bytes, 0),
        tile_id: read_u32(bytes, 4),
        generation: read_u32(bytes, 8),
        children: read_u32(bytes, 12),
        accumulation_id: read_u32(bytes, 16),
        region,
        color,
        depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_pinned() {
        let mut t = Tile::filled(
            0x0403_0201,
            PixelRect { x: 7, y: 9, w: 1, h: 1 },
            [1.0, 0.0, 0.0, 1.0],
            2.0,
        );
        t.frame_index = 5;
        t.generation = 1;
        t.children = 3;
        t.accumulation_id = 2;
        let bytes = encode_tile(&t);
        assert_eq!(&bytes[0..4], &5u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &0x0403_0201u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(&bytes[20..22], &7u16.to_le_bytes());
        assert_eq!(&bytes[22..24], &9u16.to_le_bytes());
        assert_eq!(&bytes[24..26], &1u16.to_le_bytes());
        assert_eq!(&bytes[26..28], &1u16.to_le_bytes());
        assert_eq!(bytes.len(), TILE_HEADER_BYTES + 20);
        assert_eq!(&bytes[28..32], &1.0f32.to_le_bytes());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let t = Tile::filled(0, PixelRect { x: 0, y: 0, w: 2, h: 2 }, [0.5; 4], 1.0);
        let bytes = encode_tile(&t);
        assert!(decode_tile(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_tile(&bytes[..10]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_preserves_tiles(
            w in 1u32..20, h in 1u32..20, frame in 0u32..100,
            gen in 0u32..4, children in 0u32..8, seed in 0u64..1000
        ) {
            let region = PixelRect { x: 3, y: 11, w, h };
            let mut t = Tile::filled(9, region, [0.0; 4], 0.0);
            t.frame_index = frame;
            t.generation = gen;
            t.children = children;
            let mut s = seed.wrapping_add(1);
            for c in t.color.iter_mut().chain(t.depth.iter_mut()) {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *c = ((s >> 33) as f32) / (1u64 << 31) as f32;
            }
            let back = decode_tile(&encode_tile(&t)).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
