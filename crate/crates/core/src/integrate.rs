//! Emission-absorption integration of one camera ray through one brick.
//!
//! Samples lie on a scene-global comb `t = (k + phase) * step`, never on a
//! per-brick grid: the sample set a ray sees inside `[enter, exit)` is then
//! exactly the union of the sample sets of any split of that interval, which
//! is what makes brick-split compositing agree with unsplit integration.

use crate::brick::Brick;
use crate::math::Ray;
use crate::ops::over;
use crate::transfer::TransferFunction;

#[derive(Debug, Clone, Copy)]
pub struct IntegrationParams {
    /// Ray-march step in world units.
    pub step: f32,
    /// Opacity-correction reference step (one voxel).
    pub unit_step: f32,
    /// Global volume extent, for clamped boundary interpolation.
    pub volume_dims: [u32; 3],
}

impl IntegrationParams {
    pub fn new(step: f32, volume_dims: [u32; 3]) -> Self {
        IntegrationParams {
            step,
            unit_step: 1.0,
            volume_dims,
        }
    }
}

/// One brick's contribution to one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrickFragment {
    /// Premultiplied RGBA.
    pub rgba: [f32; 4],
    /// Ray parameter where the ray enters the brick bounds.
    pub entry_depth: f32,
}

/// First sample index k with `(k + phase) * step >= t`, by intent. Both
/// bricks sharing a face compute this from the same float `t`, so the
/// resulting k-ranges partition exactly.
#[inline]
fn first_sample(t: f32, step: f32, phase: f32) -> i64 {
    libm::ceilf(t / step - phase) as i64
}

/// Integrate `ray` through the brick, clipped to its logical bounds.
/// Returns None when the ray misses the bounds entirely.
pub fn integrate_brick(
    ray: &Ray,
    brick: &Brick,
    tf: &TransferFunction,
    params: &IntegrationParams,
    phase: f32,
) -> Option<BrickFragment> {
    let (enter, exit) = ray.clip_to_box(brick.bounds)?;
    let k0 = first_sample(enter, params.step, phase);
    let k1 = first_sample(exit, params.step, phase);
    let exponent = params.step / params.unit_step;
    let clamp_hi = [
        params.volume_dims[0] as i32,
        params.volume_dims[1] as i32,
        params.volume_dims[2] as i32,
    ];

    let mut acc = [0.0f32; 4];
    for k in k0..k1 {
        let t = (k as f32 + phase) * params.step;
        let p = ray.at(t);
        let value = brick.voxels.sample(p, [0, 0, 0], clamp_hi);
        let c = tf.lookup(value);
        if c[3] <= 0.0 {
            continue;
        }
        let alpha = 1.0 - libm::powf(1.0 - c[3], exponent);
        over(&mut acc, [c[0] * alpha, c[1] * alpha, c[2] * alpha, alpha]);
    }
    Some(BrickFragment {
        rgba: acc,
        entry_depth: enter,
    })
}
