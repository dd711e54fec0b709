//! Core building blocks for a tile-based distributed framebuffer: the tile
//! grid and ownership model, pixel-format conversion, tile operations
//! (single-input, averaging, depth-sorted alpha blending), and a deterministic
//! emission-absorption volume raycaster over analytic bricks.
//!
//! Everything in this crate is pure computation: no IO, no threads, no clocks.
//! The companion `dfb` crate supplies the messaging layer, the framebuffer
//! coordinator, and the benchmark harness.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod accum;
pub mod brick;
pub mod camera;
pub mod cull;
pub mod error;
pub mod field;
pub mod integrate;
pub mod jitter;
pub mod math;
pub mod ops;
pub mod pixel;
pub mod plan;
pub mod tile;
pub mod transfer;
pub mod wire;

pub use accum::AccumTile;
pub use brick::{Brick, BrickGrid};
pub use camera::{orbit_camera, Camera};
pub use error::CoreError;
pub use field::{field_value, VoxelGrid};
pub use integrate::{integrate_brick, BrickFragment, IntegrationParams};
pub use math::{Box3, Ray, Vec3};
pub use ops::{AlphaBlendOp, ImageParallelOp, OpError, PendingSummary, ProcessResult, TileOperation};
pub use pixel::{encode_display_pixels, tone_map, ToneMapParams};
pub use plan::{plan_redundancy, tile_brick_owner};
pub use tile::{ColorFormat, FrameConfig, PixelRect, Tile, TileDescriptor, TileGrid};
pub use transfer::TransferFunction;
