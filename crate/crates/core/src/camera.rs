//! Pinhole camera, primary-ray generation, and the orbit path used by the
//! benchmarks.

use crate::error::CoreError;
use crate::jitter::{sample_jitter, SampleJitter};
use crate::math::{Box3, Ray, Vec3};

#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub position: Vec3,
    forward: Vec3,
    right: Vec3,
    up: Vec3,
    tan_half_fov: f32,
    pub aspect: f32,
}

impl Camera {
    pub fn new(
        position: Vec3,
        direction: Vec3,
        up: Vec3,
        fov_y_degrees: f32,
        aspect: f32,
    ) -> Result<Self, CoreError> {
        let forward = direction.normalized();
        let right = up.cross(forward);
        if right.length() < 1e-6 {
            return Err(CoreError::Config("camera direction and up are parallel"));
        }
        let right = right.normalized();
        let up = forward.cross(right);
        Ok(Camera {
            position,
            forward,
            right,
            up,
            tan_half_fov: libm::tanf(fov_y_degrees.to_radians() * 0.5),
            aspect,
        })
    }

    pub fn look_at(
        position: Vec3,
        target: Vec3,
        up: Vec3,
        fov_y_degrees: f32,
        aspect: f32,
    ) -> Result<Self, CoreError> {
        Camera::new(position, target - position, up, fov_y_degrees, aspect)
    }

    /// Ray through pixel (x, y) of a width x height image; `sub` is the
    /// subpixel offset in [0,1)^2, row 0 at the top of the image.
    pub fn primary_ray(&self, x: u32, y: u32, sub: (f32, f32), width: u32, height: u32) -> Ray {
        let px = ((x as f32 + sub.0) / width as f32) * 2.0 - 1.0;
        let py = 1.0 - ((y as f32 + sub.1) / height as f32) * 2.0;
        let dir = self.forward
            + self.right * (px * self.tan_half_fov * self.aspect)
            + self.up * (py * self.tan_half_fov);
        Ray {
            origin: self.position,
            dir: dir.normalized(),
        }
    }

    /// Project a world point to continuous pixel coordinates. Returns None
    /// when the point is not safely in front of the camera.
    pub fn project(&self, p: Vec3, width: u32, height: u32) -> Option<(f32, f32)> {
        let v = p - self.position;
        let z = v.dot(self.forward);
        if z < 1e-4 {
            return None;
        }
        let x = v.dot(self.right) / (z * self.tan_half_fov * self.aspect);
        let y = v.dot(self.up) / (z * self.tan_half_fov);
        Some((
            (x + 1.0) * 0.5 * width as f32,
            (1.0 - y) * 0.5 * height as f32,
        ))
    }
}

/// Deterministic camera-sample generation for one pass. The jitter depends
/// only on the global pixel index, the accumulation pass, the seed, and the
/// sample index, so any rank reproduces any other rank's rays exactly.
#[derive(Debug, Clone, Copy)]
pub struct PixelSampler {
    pub width: u32,
    pub height: u32,
    pub spp: u32,
    pub jitter: bool,
    pub seed: u64,
    pub accumulation_id: u32,
}

impl PixelSampler {
    /// Camera ray and ray-march phase for sample `sample` of pixel (x, y).
    pub fn ray(&self, camera: &Camera, x: u32, y: u32, sample: u32) -> (Ray, f32) {
        let j = if self.jitter {
            let pixel_index = y as u64 * self.width as u64 + x as u64;
            sample_jitter(pixel_index, self.accumulation_id, self.seed, sample)
        } else {
            SampleJitter::CENTERED
        };
        (
            camera.primary_ray(x, y, j.subpixel, self.width, self.height),
            j.phase,
        )
    }
}

/// Camera on a circle of radius 1.5x the scene diagonal in the y = center
/// plane, looking at the scene center. `frame_index == n_frames` wraps to the
/// frame-0 position.
pub fn orbit_camera(
    frame_index: u32,
    n_frames: u32,
    scene_bounds: Box3,
    fov_y_degrees: f32,
    aspect: f32,
) -> Camera {
    let center = scene_bounds.center();
    let radius = 1.5 * scene_bounds.diagonal();
    let angle = core::f32::consts::TAU * (frame_index % n_frames.max(1)) as f32 / n_frames.max(1) as f32;
    let position = center + Vec3::new(libm::cosf(angle), 0.0, libm::sinf(angle)) * radius;
    Camera::look_at(position, center, Vec3::new(0.0, 1.0, 0.0), fov_y_degrees, aspect)
        .expect("orbit camera is never degenerate")
}
