//! Two-stage brick/tile intersection: a conservative screen-space AABB test
//! prunes candidates, then per-pixel ray casts against the brick bounds give
//! the exact flags the dependency trees are built from. Both the tile owner
//! and the brick holders run this, so everyone agrees on the expected child
//! counts without communication.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::{Camera, PixelSampler};
use crate::math::Box3;
use crate::tile::PixelRect;

/// Conservative screen-space rectangle (min_x, min_y, max_x, max_y) of a
/// box's 8 corners. None means "treat as covering the whole viewport"
/// (a corner is behind or too close to the camera plane).
pub fn screen_rect(camera: &Camera, b: Box3, width: u32, height: u32) -> Option<(f32, f32, f32, f32)> {
    let mut rect = (f32::INFINITY, f32::INFINITY, f32::NEG_INFINITY, f32::NEG_INFINITY);
    for i in 0..8 {
        let (x, y) = camera.project(b.corner(i), width, height)?;
        rect.0 = rect.0.min(x);
        rect.1 = rect.1.min(y);
        rect.2 = rect.2.max(x);
        rect.3 = rect.3.max(y);
    }
    Some(rect)
}

fn rect_overlaps_region(rect: (f32, f32, f32, f32), region: PixelRect) -> bool {
    // Expand by one pixel so subpixel jitter can never escape the rect.
    rect.2 >= region.x as f32 - 1.0
        && rect.0 <= (region.x + region.w) as f32 + 1.0
        && rect.3 >= region.y as f32 - 1.0
        && rect.1 <= (region.y + region.h) as f32 + 1.0
}

#[derive(Debug, Clone)]
pub struct TileCull {
    /// One flag per entry of `all_bounds`: true iff at least one pixel ray of
    /// the tile hits the box.
    pub flags: Vec<bool>,
    pub count: u32,
}

/// Exact per-tile brick flags for the given tile region.
pub fn compute_tile_intersections(
    camera: &Camera,
    sampler: &PixelSampler,
    region: PixelRect,
    all_bounds: &[Box3],
) -> TileCull {
    let mut flags = vec![false; all_bounds.len()];
    let mut candidates: Vec<usize> = Vec::new();
    for (i, &b) in all_bounds.iter().enumerate() {
        let candidate = match screen_rect(camera, b, sampler.width, sampler.height) {
            Some(rect) => rect_overlaps_region(rect, region),
            // Corners behind the camera: keep conservatively, unless the
            // whole box is behind (no pixel ray can hit it then, but the
            // refinement settles that cheaply only if we keep it).
            None => true,
        };
        if candidate {
            candidates.push(i);
        }
    }

    let mut count = 0;
    for i in candidates {
        let b = all_bounds[i];
        'pixels: for py in region.y..region.y + region.h {
            for px in region.x..region.x + region.w {
                for s in 0..sampler.spp {
                    let (ray, _) = sampler.ray(camera, px, py, s);
                    if ray.clip_to_box(b).is_some() {
                        flags[i] = true;
                        count += 1;
                        break 'pixels;
                    }
                }
            }
        }
    }
    TileCull { flags, count }
}
