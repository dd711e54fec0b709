//! Piecewise-linear RGBA transfer function.

use alloc::vec::Vec;

use crate::error::CoreError;

#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    pub range: (f32, f32),
    /// (scalar, rgba) control points, sorted by scalar, opacity in [0,1].
    points: Vec<(f32, [f32; 4])>,
}

impl TransferFunction {
    pub fn new(range: (f32, f32), points: Vec<(f32, [f32; 4])>) -> Result<Self, CoreError> {
        if points.is_empty() {
            return Err(CoreError::Config("transfer function needs control points"));
        }
        if range.1 <= range.0 {
            return Err(CoreError::Config("transfer function range is empty"));
        }
        for w in points.windows(2) {
            if w[1].0 < w[0].0 {
                return Err(CoreError::Config("control points must be sorted by scalar"));
            }
        }
        if points.iter().any(|(_, c)| !(0.0..=1.0).contains(&c[3])) {
            return Err(CoreError::Config("opacity must lie in [0,1]"));
        }
        Ok(TransferFunction { range, points })
    }

    /// A transfer function that maps everything to zero opacity.
    pub fn transparent() -> Self {
        TransferFunction {
            range: (0.0, 1.0),
            points: alloc::vec![(0.0, [0.0; 4]), (1.0, [0.0; 4])],
        }
    }

    /// Default colormap used by the benchmark scenes.
    pub fn default_colormap() -> Self {
        TransferFunction {
            range: (0.0, 1.0),
            points: alloc::vec![
                (0.0, [0.05, 0.05, 0.30, 0.00]),
                (0.4, [0.10, 0.60, 0.80, 0.05]),
                (0.7, [0.90, 0.70, 0.20, 0.30]),
                (1.0, [1.00, 0.30, 0.10, 0.80]),
            ],
        }
    }

    pub fn points(&self) -> &[(f32, [f32; 4])] {
        &self.points
    }

    /// Sample the map at a scalar value (clamped to the range).
    pub fn lookup(&self, value: f32) -> [f32; 4] {
        let t = (value - self.range.0) / (self.range.1 - self.range.0);
        let t = t.clamp(0.0, 1.0);
        let first = self.points[0];
        let last = self.points[self.points.len() - 1];
        if t <= first.0 {
            return first.1;
        }
        if t >= last.0 {
            return last.1;
        }
        for w in self.points.windows(2) {
            let (a, ca) = w[0];
            let (b, cb) = w[1];
            if t >= a && t <= b {
                let f = if b > a { (t - a) / (b - a) } else { 0.0 };
                let mut out = [0.0; 4];
                for i in 0..4 {
                    out[i] = ca[i] + (cb[i] - ca[i]) * f;
                }
                return out;
            }
        }
        last.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn interpolates_between_points() {
        let tf = TransferFunction::new(
            (0.0, 1.0),
            vec![(0.0, [0.0, 0.0, 0.0, 0.0]), (1.0, [1.0, 0.5, 0.0, 1.0])],
        )
        .unwrap();
        let mid = tf.lookup(0.5);
        assert!((mid[0] - 0.5).abs() < 1e-6);
        assert!((mid[1] - 0.25).abs() < 1e-6);
        assert!((mid[3] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn clamps_out_of_range_values() {
        let tf = TransferFunction::default_colormap();
        assert_eq!(tf.lookup(-5.0), tf.lookup(0.0));
        assert_eq!(tf.lookup(7.0), tf.lookup(1.0));
    }

    #[test]
    fn rejects_unsorted_points() {
        let r = TransferFunction::new((0.0, 1.0), vec![(0.5, [0.0; 4]), (0.1, [0.0; 4])]);
        assert!(r.is_err());
    }
}
