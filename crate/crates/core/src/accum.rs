//! Progressive accumulation and variance tracking for one owned tile.
//!
//! Sums are kept in f64 so the accumulated image matches the arithmetic mean
//! of the individual passes to well below display precision.

use alloc::vec;
use alloc::vec::Vec;

/// Rec.709 luma of an un-premultiplied color.
#[inline]
fn luminance(px: &[f32]) -> f64 {
    let a = px[3];
    let (r, g, b) = if a > 0.0 {
        (px[0] / a, px[1] / a, px[2] / a)
    } else {
        (0.0, 0.0, 0.0)
    };
    0.2126 * r as f64 + 0.7152 * g as f64 + 0.0722 * b as f64
}

#[derive(Debug, Clone)]
pub struct AccumTile {
    area: usize,
    passes: u32,
    color_sum: Vec<f64>,
    lum_sum: Vec<f64>,
    lum_sum_sq: Vec<f64>,
}

impl AccumTile {
    pub fn new(area: usize) -> Self {
        AccumTile {
            area,
            passes: 0,
            color_sum: vec![0.0; area * 4],
            lum_sum: vec![0.0; area],
            lum_sum_sq: vec![0.0; area],
        }
    }

    pub fn reset(&mut self) {
        self.passes = 0;
        self.color_sum.fill(0.0);
        self.lum_sum.fill(0.0);
        self.lum_sum_sq.fill(0.0);
    }

    pub fn passes(&self) -> u32 {
        self.passes
    }

    /// Fold one finished pass into the running sums.
    pub fn add_pass(&mut self, finished_color: &[f32]) {
        debug_assert_eq!(finished_color.len(), self.area * 4);
        for (sum, &c) in self.color_sum.iter_mut().zip(finished_color) {
            *sum += c as f64;
        }
        for px in 0..self.area {
            let l = luminance(&finished_color[px * 4..px * 4 + 4]);
            self.lum_sum[px] += l;
            self.lum_sum_sq[px] += l * l;
        }
        self.passes += 1;
    }

    /// The accumulated (mean) image so far.
    pub fn mean_into(&self, out: &mut [f32]) {
        let inv = 1.0 / self.passes.max(1) as f64;
        for (o, &s) in out.iter_mut().zip(&self.color_sum) {
            *o = (s * inv) as f32;
        }
    }

    /// Mean over pixels of the unbiased per-pixel luminance variance across
    /// passes. None with fewer than two passes.
    pub fn tile_error(&self) -> Option<f32> {
        if self.passes < 2 {
            return None;
        }
        let n = self.passes as f64;
        let mut total = 0.0f64;
        for px in 0..self.area {
            let sum = self.lum_sum[px];
            let var = (self.lum_sum_sq[px] - sum * sum / n) / (n - 1.0);
            total += var.max(0.0);
        }
        Some((total / self.area as f64) as f32)
    }
}
