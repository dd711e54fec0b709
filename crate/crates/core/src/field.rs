//! The synthetic scalar field and its voxelization. Every rank evaluates the
//! same analytic function, so bricks can be generated on demand and ghost
//! voxels agree with the neighbor's boundary voxels exactly.

use alloc::vec::Vec;

use crate::math::Vec3;

/// Analytic benchmark field, `f(p) in [0,1]`, identical on all ranks.
pub fn field_value(p: Vec3) -> f32 {
    0.5 + 0.5 * libm::sinf(0.17 * p.x) * libm::sinf(0.13 * p.y) * libm::cosf(0.11 * p.z)
}

/// A dense voxel block sampled from the field. Voxel (i,j,k) is centered at
/// `origin + (i+0.5, j+0.5, k+0.5)` in world units (one voxel per unit).
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    /// Integer voxel coordinate of the block's first voxel.
    pub origin: [i32; 3],
    pub dims: [u32; 3],
    pub values: Vec<f32>,
}

impl VoxelGrid {
    pub fn from_field(origin: [i32; 3], dims: [u32; 3]) -> Self {
        let mut values = Vec::with_capacity(dims[0] as usize * dims[1] as usize * dims[2] as usize);
        for k in 0..dims[2] as i32 {
            for j in 0..dims[1] as i32 {
                for i in 0..dims[0] as i32 {
                    let center = Vec3::new(
                        (origin[0] + i) as f32 + 0.5,
                        (origin[1] + j) as f32 + 0.5,
                        (origin[2] + k) as f32 + 0.5,
                    );
                    values.push(field_value(center));
                }
            }
        }
        VoxelGrid { origin, dims, values }
    }

    #[inline]
    fn value_at(&self, i: i32, j: i32, k: i32) -> f32 {
        // Clamp to the stored block: lookups just past the ghost layer (rays
        // grazing the bounds) degrade to the nearest stored voxel.
        let x = (i - self.origin[0]).clamp(0, self.dims[0] as i32 - 1) as usize;
        let y = (j - self.origin[1]).clamp(0, self.dims[1] as i32 - 1) as usize;
        let z = (k - self.origin[2]).clamp(0, self.dims[2] as i32 - 1) as usize;
        self.values[(z * self.dims[1] as usize + y) * self.dims[0] as usize + x]
    }

    /// Trilinear sample at world point `p`, clamping voxel lookups to
    /// `clamp_lo..clamp_hi` (the global volume extent, so rays sampling at
    /// the outer faces behave identically no matter which brick owns them).
    pub fn sample(&self, p: Vec3, clamp_lo: [i32; 3], clamp_hi: [i32; 3]) -> f32 {
        let gx = p.x - 0.5;
        let gy = p.y - 0.5;
        let gz = p.z - 0.5;
        let ix = libm::floorf(gx);
        let iy = libm::floorf(gy);
        let iz = libm::floorf(gz);
        let fx = gx - ix;
        let fy = gy - iy;
        let fz = gz - iz;
        let (ix, iy, iz) = (ix as i32, iy as i32, iz as i32);

        let cl = |v: i32, a: usize| v.clamp(clamp_lo[a], clamp_hi[a] - 1);
        let mut c = [0.0f32; 8];
        for (n, corner) in c.iter_mut().enumerate() {
            let dx = (n & 1) as i32;
            let dy = ((n >> 1) & 1) as i32;
            let dz = ((n >> 2) & 1) as i32;
            *corner = self.value_at(cl(ix + dx, 0), cl(iy + dy, 1), cl(iz + dz, 2));
        }
        let lerp = |a: f32, b: f32, t: f32| a + (b - a) * t;
        let x00 = lerp(c[0], c[1], fx);
        let x10 = lerp(c[2], c[3], fx);
        let x01 = lerp(c[4], c[5], fx);
        let x11 = lerp(c[6], c[7], fx);
        let y0 = lerp(x00, x10, fy);
        let y1 = lerp(x01, x11, fy);
        lerp(y0, y1, fz)
    }
}
