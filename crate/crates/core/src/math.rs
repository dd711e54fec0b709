//! Minimal 3D vector/box/ray math used by the raycaster and culling stages.

use core::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f32,
    pub y: f32,
    pub z: f32,
}

impl Vec3 {
    pub const fn new(x: f32, y: f32, z: f32) -> Self {
        Vec3 { x, y, z }
    }

    pub const fn splat(v: f32) -> Self {
        Vec3 { x: v, y: v, z: v }
    }

    pub fn dot(self, o: Vec3) -> f32 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn length(self) -> f32 {
        libm::sqrtf(self.dot(self))
    }

    pub fn normalized(self) -> Vec3 {
        let len = self.length();
        self * (1.0 / len)
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f32> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f32) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Axis-aligned box, `lower` inclusive, `upper` exclusive for containment
/// purposes but treated as a closed box by the slab intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3 {
    pub lower: Vec3,
    pub upper: Vec3,
}

impl Box3 {
    pub const fn new(lower: Vec3, upper: Vec3) -> Self {
        Box3 { lower, upper }
    }

    pub fn center(self) -> Vec3 {
        (self.lower + self.upper) * 0.5
    }

    pub fn diagonal(self) -> f32 {
        (self.upper - self.lower).length()
    }

    pub fn contains(self, p: Vec3) -> bool {
        p.x >= self.lower.x
            && p.y >= self.lower.y
            && p.z >= self.lower.z
            && p.x <= self.upper.x
            && p.y <= self.upper.y
            && p.z <= self.upper.z
    }

    pub fn corner(self, i: usize) -> Vec3 {
        Vec3::new(
            if i & 1 == 0 { self.lower.x } else { self.upper.x },
            if i & 2 == 0 { self.lower.y } else { self.upper.y },
            if i & 4 == 0 { self.lower.z } else { self.upper.z },
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f32) -> Vec3 {
        self.origin + self.dir * t
    }

    /// Slab intersection clipped to t >= 0. Returns the parametric interval
    /// `[enter, exit)` with `enter < exit`, or None if the ray misses the box
    /// or the box lies entirely behind the origin.
    ///
    /// Rays starting inside the box return `enter = 0`. Axes with zero
    /// direction components produce NaN slabs which min/max discard, so rays
    /// parallel to a face are handled without special cases.
    pub fn clip_to_box(&self, b: Box3) -> Option<(f32, f32)> {
        let inv = Vec3::new(1.0 / self.dir.x, 1.0 / self.dir.y, 1.0 / self.dir.z);
        let t0 = Vec3::new(
            (b.lower.x - self.origin.x) * inv.x,
            (b.lower.y - self.origin.y) * inv.y,
            (b.lower.z - self.origin.z) * inv.z,
        );
        let t1 = Vec3::new(
            (b.upper.x - self.origin.x) * inv.x,
            (b.upper.y - self.origin.y) * inv.y,
            (b.upper.z - self.origin.z) * inv.z,
        );
        // f32::min/max return the non-NaN operand, so a NaN slab never
        // constrains the interval.
        let near = t0.min(t1);
        let far = t0.max(t1);
        let enter = near.x.max(near.y).max(near.z).max(0.0);
        let exit = far.x.min(far.y).min(far.z);
        if enter < exit {
            Some((enter, exit))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slab_hit_through_unit_box() {
        let b = Box3::new(Vec3::splat(0.0), Vec3::splat(1.0));
        let r = Ray {
            origin: Vec3::new(-1.0, 0.5, 0.5),
            dir: Vec3::new(1.0, 0.0, 0.0),
        };
        let (t0, t1) = r.clip_to_box(b).unwrap();
        assert_eq!(t0, 1.0);
        assert_eq!(t1, 2.0);
    }

    #[test]
    fn slab_miss_and_behind() {
        let b = Box3::new(Vec3::splat(0.0), Vec3::splat(1.0));
        let miss = Ray {
            origin: Vec3::new(-1.0, 2.0, 0.5),
            dir: Vec3::new(1.0, 0.0, 0.0),
        };
        assert!(miss.clip_to_box(b).is_none());
        let behind = Ray {
            origin: Vec3::new(2.0, 0.5, 0.5),
            dir: Vec3::new(1.0, 0.0, 0.0),
        };
        assert!(behind.clip_to_box(b).is_none());
    }

    #[test]
    fn slab_origin_inside_clamps_to_zero() {
        let b = Box3::new(Vec3::splat(0.0), Vec3::splat(1.0));
        let r = Ray {
            origin: Vec3::splat(0.5),
            dir: Vec3::new(0.0, 0.0, 1.0),
        };
        let (t0, t1) = r.clip_to_box(b).unwrap();
        assert_eq!(t0, 0.0);
        assert!((t1 - 0.5).abs() < 1e-6);
    }

    #[test]
    fn slab_shared_plane_is_bitwise_consistent() {
        // Two bricks split at x=3: the front exit and the back entry must be
        // the same float so sample partitioning is exact.
        let front = Box3::new(Vec3::splat(0.0), Vec3::new(3.0, 6.0, 6.0));
        let back = Box3::new(Vec3::new(3.0, 0.0, 0.0), Vec3::splat(6.0));
        let r = Ray {
            origin: Vec3::new(-0.3, 1.7, 2.9),
            dir: Vec3::new(0.8, 0.1, 0.05).normalized(),
        };
        let (_, exit_front) = r.clip_to_box(front).unwrap();
        let (enter_back, _) = r.clip_to_box(back).unwrap();
        assert_eq!(exit_front.to_bits(), enter_back.to_bits());
    }
}
