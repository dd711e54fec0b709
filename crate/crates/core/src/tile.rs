//! Tile grid, ownership assignment, and the tile payload carried between
//! ranks.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;

pub const DEFAULT_TILE_SIZE: u32 = 64;

/// Display output format for final pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorFormat {
    Rgba8,
    RgbaF32,
    /// The display rank neither receives nor stores final pixels.
    None,
}

impl ColorFormat {
    pub fn bytes_per_pixel(self) -> usize {
        match self {
            ColorFormat::Rgba8 => 4,
            ColorFormat::RgbaF32 => 16,
            ColorFormat::None => 0,
        }
    }
}

/// Static framebuffer configuration shared by all ranks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameConfig {
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub color_format: ColorFormat,
    pub accumulation_enabled: bool,
}

impl FrameConfig {
    pub fn new(width: u32, height: u32) -> Self {
        FrameConfig {
            width,
            height,
            tile_size: DEFAULT_TILE_SIZE,
            color_format: ColorFormat::Rgba8,
            accumulation_enabled: false,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.width == 0 || self.height == 0 {
            return Err(CoreError::Config("frame dimensions must be >= 1"));
        }
        if self.tile_size == 0 {
            return Err(CoreError::Config("tile size must be >= 1"));
        }
        Ok(())
    }

    pub fn tiles_x(&self) -> u32 {
        self.width.div_ceil(self.tile_size)
    }

    pub fn tiles_y(&self) -> u32 {
        self.height.div_ceil(self.tile_size)
    }

    pub fn tile_count(&self) -> u32 {
        self.tiles_x() * self.tiles_y()
    }
}

/// Inclusive-exclusive pixel rectangle in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub fn area(&self) -> usize {
        self.w as usize * self.h as usize
    }
}

/// Per-tile routing record: grid coordinates, row-major id, owning rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileDescriptor {
    pub coords: (u32, u32),
    pub tile_id: u32,
    pub owner_rank: u32,
    pub region: PixelRect,
}

/// One tile payload: either a rendered input handed to `setTile` or a
/// finished output. Color is premultiplied RGBA, depth the camera-ray
/// parameter (`+inf` = background). Both buffers cover `region.area()`
/// pixels in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub frame_index: u32,
    pub tile_id: u32,
    pub generation: u32,
    pub children: u32,
    pub accumulation_id: u32,
    pub region: PixelRect,
    pub color: Vec<f32>,
    pub depth: Vec<f32>,
}

impl Tile {
    /// A tile filled with a constant premultiplied color at a fixed depth.
    pub fn filled(tile_id: u32, region: PixelRect, rgba: [f32; 4], depth: f32) -> Self {
        let area = region.area();
        let mut color = Vec::with_capacity(area * 4);
        for _ in 0..area {
            color.extend_from_slice(&rgba);
        }
        Tile {
            frame_index: 0,
            tile_id,
            generation: 0,
            children: 0,
            accumulation_id: 0,
            region,
            color,
            depth: vec![depth; area],
        }
    }
}

/// The full tile grid with round-robin ownership: `owner = tile_id % ranks`.
#[derive(Debug, Clone)]
pub struct TileGrid {
    pub config: FrameConfig,
    pub num_ranks: u32,
    descriptors: Vec<TileDescriptor>,
}

impl TileGrid {
    pub fn new(config: FrameConfig, num_ranks: u32) -> Result<Self, CoreError> {
        config.validate()?;
        if num_ranks == 0 {
            return Err(CoreError::Config("need at least one rank"));
        }
        let tiles_x = config.tiles_x();
        let tiles_y = config.tiles_y();
        let mut descriptors = Vec::with_capacity((tiles_x * tiles_y) as usize);
        for ty in 0..tiles_y {
            for tx in 0..tiles_x {
                let tile_id = ty * tiles_x + tx;
                let x = tx * config.tile_size;
                let y = ty * config.tile_size;
                let region = PixelRect {
                    x,
                    y,
                    w: (config.width - x).min(config.tile_size),
                    h: (config.height - y).min(config.tile_size),
                };
                descriptors.push(TileDescriptor {
                    coords: (tx, ty),
                    tile_id,
                    owner_rank: tile_id % num_ranks,
                    region,
                });
            }
        }
        Ok(TileGrid {
            config,
            num_ranks,
            descriptors,
        })
    }

    pub fn descriptors(&self) -> &[TileDescriptor] {
        &self.descriptors
    }

    pub fn descriptor(&self, tile_id: u32) -> Option<&TileDescriptor> {
        self.descriptors.get(tile_id as usize)
    }

    pub fn tile_count(&self) -> u32 {
        self.descriptors.len() as u32
    }

    pub fn owned_by(&self, rank: u32) -> impl Iterator<Item = &TileDescriptor> {
        self.descriptors.iter().filter(move |d| d.owner_rank == rank)
    }

    pub fn owned_count(&self, rank: u32) -> u32 {
        self.owned_by(rank).count() as u32
    }
}
