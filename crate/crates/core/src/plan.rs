//! Work-distribution decisions: which rank renders a shared brick for a
//! given tile, and which tiles get redundant renderers based on the previous
//! frame's error estimates.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;

/// The unique rank, among the sorted ranks sharing a brick, that renders the
/// brick for `tile_id`.
pub fn tile_brick_owner(brick_shares: &[u32], tile_id: u32) -> Result<u32, CoreError> {
    if brick_shares.is_empty() {
        return Err(CoreError::Usage("brick share list is empty"));
    }
    Ok(brick_shares[tile_id as usize % brick_shares.len()])
}

/// Per-tile redundancy: the top `budget_fraction` of tiles by error render
/// twice, everything else once. Ties resolve to the lower tile id.
pub fn plan_redundancy(tile_errors: &[f32], budget_fraction: f32) -> Result<Vec<u32>, CoreError> {
    if !(0.0..=1.0).contains(&budget_fraction) {
        return Err(CoreError::Usage("budget fraction must lie in [0,1]"));
    }
    let n = tile_errors.len();
    let boosted = (budget_fraction as f64 * n as f64 + 1e-9) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        tile_errors[b]
            .total_cmp(&tile_errors[a])
            .then(a.cmp(&b))
    });
    let mut plan = vec![1u32; n];
    for &i in order.iter().take(boosted) {
        plan[i] = 2;
    }
    Ok(plan)
}
