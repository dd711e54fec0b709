//! Volume bricks: axis-aligned subregions of the global volume with a shared
//! integer id. Ranks holding the same id hold identical bounds and voxel
//! content, which is what lets the mixed-parallel renderer split a brick's
//! rendering across its holders.

use alloc::vec::Vec;

use crate::error::CoreError;
use crate::field::VoxelGrid;
use crate::math::{Box3, Vec3};

#[derive(Debug, Clone)]
pub struct Brick {
    pub id: u32,
    /// Logical bounds in world units (voxel coordinates); camera rays are
    /// clipped to this box.
    pub bounds: Box3,
    /// Bounds including the one-voxel ghost layer (clamped at the volume
    /// boundary), used only for boundary interpolation.
    pub ghost_bounds: Box3,
    pub voxels: VoxelGrid,
}

impl Brick {
    /// Generate the brick's voxels (including ghost layer) from the analytic
    /// field. `lo`/`hi` are inclusive-exclusive voxel index bounds.
    pub fn generate(id: u32, lo: [i32; 3], hi: [i32; 3], volume_dims: [u32; 3]) -> Self {
        let mut glo = [0i32; 3];
        let mut ghi = [0i32; 3];
        for a in 0..3 {
            glo[a] = (lo[a] - 1).max(0);
            ghi[a] = (hi[a] + 1).min(volume_dims[a] as i32);
        }
        let dims = [
            (ghi[0] - glo[0]) as u32,
            (ghi[1] - glo[1]) as u32,
            (ghi[2] - glo[2]) as u32,
        ];
        Brick {
            id,
            bounds: Box3::new(
                Vec3::new(lo[0] as f32, lo[1] as f32, lo[2] as f32),
                Vec3::new(hi[0] as f32, hi[1] as f32, hi[2] as f32),
            ),
            ghost_bounds: Box3::new(
                Vec3::new(glo[0] as f32, glo[1] as f32, glo[2] as f32),
                Vec3::new(ghi[0] as f32, ghi[1] as f32, ghi[2] as f32),
            ),
            voxels: VoxelGrid::from_field(glo, dims),
        }
    }
}

/// The static brick decomposition of a volume plus the replicated assignment
/// of bricks to ranks.
#[derive(Debug, Clone)]
pub struct BrickGrid {
    pub volume_dims: [u32; 3],
    pub grid: [u32; 3],
    pub replication: u32,
    pub num_ranks: u32,
    /// Inclusive-exclusive voxel bounds per brick id.
    extents: Vec<([i32; 3], [i32; 3])>,
    /// Sorted rank list per brick id.
    shares: Vec<Vec<u32>>,
}

impl BrickGrid {
    pub fn new(
        volume_dims: [u32; 3],
        grid: [u32; 3],
        replication: u32,
        num_ranks: u32,
    ) -> Result<Self, CoreError> {
        if volume_dims.contains(&0) || grid.contains(&0) {
            return Err(CoreError::Config("volume and brick grid dims must be >= 1"));
        }
        if replication == 0 || num_ranks == 0 {
            return Err(CoreError::Config("replication and rank count must be >= 1"));
        }
        if replication > num_ranks {
            return Err(CoreError::Config("replication cannot exceed rank count"));
        }
        if grid.iter().zip(volume_dims.iter()).any(|(&g, &d)| g > d) {
            return Err(CoreError::Config("more bricks than voxels along an axis"));
        }
        let num_bricks = grid[0] * grid[1] * grid[2];
        let mut extents = Vec::with_capacity(num_bricks as usize);
        for bz in 0..grid[2] {
            for by in 0..grid[1] {
                for bx in 0..grid[0] {
                    let cell = [bx, by, bz];
                    let mut lo = [0i32; 3];
                    let mut hi = [0i32; 3];
                    for a in 0..3 {
                        lo[a] = (cell[a] as u64 * volume_dims[a] as u64 / grid[a] as u64) as i32;
                        hi[a] = ((cell[a] + 1) as u64 * volume_dims[a] as u64 / grid[a] as u64) as i32;
                    }
                    extents.push((lo, hi));
                }
            }
        }
        // Brick b lives on ranks (b + j) mod num_ranks, j in 0..replication.
        let mut shares = Vec::with_capacity(num_bricks as usize);
        let mut rank_load = alloc::vec![0u32; num_ranks as usize];
        for b in 0..num_bricks {
            let mut s: Vec<u32> = (0..replication).map(|j| (b + j) % num_ranks).collect();
            s.sort_unstable();
            s.dedup();
            for &r in &s {
                rank_load[r as usize] += 1;
            }
            shares.push(s);
        }
        if rank_load.contains(&0) {
            return Err(CoreError::Config(
                "brick assignment leaves a rank without data; use at least as many bricks as ranks",
            ));
        }
        Ok(BrickGrid {
            volume_dims,
            grid,
            replication,
            num_ranks,
            extents,
            shares,
        })
    }

    pub fn brick_count(&self) -> u32 {
        self.extents.len() as u32
    }

    pub fn volume_bounds(&self) -> Box3 {
        Box3::new(
            Vec3::splat(0.0),
            Vec3::new(
                self.volume_dims[0] as f32,
                self.volume_dims[1] as f32,
                self.volume_dims[2] as f32,
            ),
        )
    }

    /// Logical bounds of every brick, indexed by brick id. Identical on all
    /// ranks; this is what gets "gathered" at scene setup.
    pub fn all_bounds(&self) -> Vec<Box3> {
        self.extents
            .iter()
            .map(|(lo, hi)| {
                Box3::new(
                    Vec3::new(lo[0] as f32, lo[1] as f32, lo[2] as f32),
                    Vec3::new(hi[0] as f32, hi[1] as f32, hi[2] as f32),
                )
            })
            .collect()
    }

    /// Sorted ranks holding brick `id`.
    pub fn shares(&self, id: u32) -> &[u32] {
        &self.shares[id as usize]
    }

    pub fn bricks_on_rank(&self, rank: u32) -> Vec<u32> {
        (0..self.brick_count())
            .filter(|&b| self.shares[b as usize].contains(&rank))
            .collect()
    }

    pub fn generate_brick(&self, id: u32) -> Brick {
        let (lo, hi) = self.extents[id as usize];
        Brick::generate(id, lo, hi, self.volume_dims)
    }

    /// Near-cubic factorization of `n` into a brick grid, e.g. 8 -> 2x2x2.
    pub fn factorize(n: u32) -> [u32; 3] {
        let mut dims = [1u32; 3];
        let mut rest = n.max(1);
        while rest > 1 {
            let mut p = 2;
            while p * p <= rest && !rest.is_multiple_of(p) {
                p += 1;
            }
            if !rest.is_multiple_of(p) {
                p = rest;
            }
            // Assign each prime factor to the currently smallest axis.
            let axis = (0..3).min_by_key(|&a| dims[a]).unwrap();
            dims[axis] *= p;
            rest /= p;
        }
        dims.sort_unstable();
        dims
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorize_small_counts() {
        assert_eq!(BrickGrid::factorize(1), [1, 1, 1]);
        assert_eq!(BrickGrid::factorize(2), [1, 1, 2]);
        assert_eq!(BrickGrid::factorize(4), [1, 2, 2]);
        assert_eq!(BrickGrid::factorize(8), [2, 2, 2]);
        assert_eq!(BrickGrid::factorize(16), [2, 2, 4]);
    }

    #[test]
    fn bricks_partition_volume() {
        let g = BrickGrid::new([100, 64, 64], [3, 2, 2], 1, 12).unwrap();
        let mut voxels = 0u64;
        for b in 0..g.brick_count() {
            let (lo, hi) = g.extents[b as usize];
            voxels += (0..3).map(|a| (hi[a] - lo[a]) as u64).product::<u64>();
        }
        assert_eq!(voxels, 100 * 64 * 64);
    }

    #[test]
    fn replication_covers_every_rank() {
        let g = BrickGrid::new([64, 64, 64], [2, 2, 2], 2, 8).unwrap();
        for b in 0..8 {
            assert_eq!(g.shares(b).len(), 2);
        }
        for r in 0..8 {
            assert_eq!(g.bricks_on_rank(r).len(), 2);
        }
        // Same id on multiple ranks means identical bounds and voxels.
        let a = g.generate_brick(3);
        let b = g.generate_brick(3);
        assert_eq!(a.bounds, b.bounds);
        assert_eq!(a.voxels.values, b.voxels.values);
    }

    #[test]
    fn underfilled_assignment_rejected() {
        // 4 bricks over 8 ranks with R=1 leaves ranks without data.
        assert!(BrickGrid::new([64, 64, 64], [2, 2, 1], 1, 8).is_err());
    }

    #[test]
    fn ghost_layer_matches_neighbor_boundary() {
        let g = BrickGrid::new([32, 16, 16], [2, 1, 1], 1, 2).unwrap();
        let left = g.generate_brick(0);
        let right = g.generate_brick(1);
        // Left brick's ghost column at x=16 must equal the right brick's
        // first interior column, for every (y, z).
        for z in 0..16 {
            for y in 0..16 {
                let p = Vec3::new(16.5, y as f32 + 0.5, z as f32 + 0.5);
                let a = left.voxels.sample(p, [0, 0, 0], [32, 16, 16]);
                let b = right.voxels.sample(p, [0, 0, 0], [32, 16, 16]);
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
