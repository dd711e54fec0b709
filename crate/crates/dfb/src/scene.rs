//! Scene description: the synthetic volume, its brick decomposition and
//! replication, transfer function, and sampling parameters. Serializable to
//! a small key/value text file so runs are reproducible.

use std::path::Path;

use dfb_core::brick::BrickGrid;
use dfb_core::transfer::TransferFunction;

use crate::error::{DfbError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub volume_dims: [u32; 3],
    pub brick_grid: [u32; 3],
    pub replication: u32,
    pub transfer: TransferFunction,
    /// Straight (un-premultiplied) RGBA background.
    pub background: [f32; 4],
    /// Ray-march step in world units.
    pub step: f32,
    pub spp: u32,
}

impl SceneConfig {
    /// The benchmark scene: one brick per rank (near-cubic decomposition of
    /// the rank count), optionally replicated.
    pub fn benchmark(volume_dims: [u32; 3], num_ranks: u32, replication: u32) -> Self {
        SceneConfig {
            volume_dims,
            brick_grid: BrickGrid::factorize(num_ranks),
            replication,
            transfer: TransferFunction::default_colormap(),
            background: [0.0, 0.0, 0.0, 1.0],
            step: 0.5,
            spp: 1,
        }
    }

    pub fn premultiplied_background(&self) -> [f32; 4] {
        let [r, g, b, a] = self.background;
        [r * a, g * a, b * a, a]
    }

    pub fn brick_count(&self) -> u32 {
        self.brick_grid.iter().product()
    }

    pub fn build_grid(&self, num_ranks: u32) -> Result<BrickGrid> {
        Ok(BrickGrid::new(
            self.volume_dims,
            self.brick_grid,
            self.replication,
            num_ranks,
        )?)
    }

    /// Parse the scene file format:
    ///
    /// ```text
    /// dims 128 128 128
    /// bricks 2 2 2
    /// replication 1
    /// background 0 0 0 1
    /// step 0.5
    /// spp 1
    /// tf_range 0 1
    /// tf_point 0.0  0.05 0.05 0.30 0.00
    /// tf_point 1.0  1.00 0.30 0.10 0.80
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut dims = [128u32; 3];
        let mut bricks = [1u32; 3];
        let mut replication = 1u32;
        let mut background = [0.0f32, 0.0, 0.0, 1.0];
        let mut step = 0.5f32;
        let mut spp = 1u32;
        let mut tf_range = (0.0f32, 1.0f32);
        let mut tf_points: Vec<(f32, [f32; 4])> = Vec::new();

        fn values<T: std::str::FromStr>(line: &str, n: usize, lineno: usize) -> Result<Vec<T>> {
            let vals: Vec<T> = line
                .split_whitespace()
                .skip(1)
                .filter_map(|v| v.parse().ok())
                .collect();
            if vals.len() != n {
                return Err(DfbError::Config(format!(
                    "scene line {lineno}: expected {n} values"
                )));
            }
            Ok(vals)
        }

        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = i + 1;
            let key = line.split_whitespace().next().unwrap();
            match key {
                "dims" => {
                    let v: Vec<u32> = values(line, 3, lineno)?;
                    dims = [v[0], v[1], v[2]];
                }
                "bricks" => {
                    let v: Vec<u32> = values(line, 3, lineno)?;
                    bricks = [v[0], v[1], v[2]];
                }
                "replication" => replication = values::<u32>(line, 1, lineno)?[0],
                "background" => {
                    let v: Vec<f32> = values(line, 4, lineno)?;
                    background = [v[0], v[1], v[2], v[3]];
                }
                "step" => step = values::<f32>(line, 1, lineno)?[0],
                "spp" => spp = values::<u32>(line, 1, lineno)?[0],
                "tf_range" => {
                    let v: Vec<f32> = values(line, 2, lineno)?;
                    tf_range = (v[0], v[1]);
                }
                "tf_point" => {
                    let v: Vec<f32> = values(line, 5, lineno)?;
                    tf_points.push((v[0], [v[1], v[2], v[3], v[4]]));
                }
                other => {
                    return Err(DfbError::Config(format!(
                        "scene line {lineno}: unknown key '{other}'"
                    )))
                }
            }
        }
        if step <= 0.0 {
            return Err(DfbError::Config("scene step must be positive".into()));
        }
        if spp == 0 {
            return Err(DfbError::Config("scene spp must be >= 1".into()));
        }
        let transfer = if tf_points.is_empty() {
            TransferFunction::default_colormap()
        } else {
            TransferFunction::new(tf_range, tf_points)?
        };
        Ok(SceneConfig {
            volume_dims: dims,
            brick_grid: bricks,
            replication,
            transfer,
            background,
            step,
            spp,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# dfb scene\n");
        out.push_str(&format!(
            "dims {} {} {}\n",
            self.volume_dims[0], self.volume_dims[1], self.volume_dims[2]
        ));
        out.push_str(&format!(
            "bricks {} {} {}\n",
            self.brick_grid[0], self.brick_grid[1], self.brick_grid[2]
        ));
        out.push_str(&format!("replication {}\n", self.replication));
        out.push_str(&format!(
            "background {} {} {} {}\n",
            self.background[0], self.background[1], self.background[2], self.background[3]
        ));
        out.push_str(&format!("step {}\n", self.step));
        out.push_str(&format!("spp {}\n", self.spp));
        let tf = &self.transfer;
        out.push_str(&format!("tf_range {} {}\n", tf.range.0, tf.range.1));
        for (s, c) in tf.points() {
            out.push_str(&format!("tf_point {} {} {} {} {}\n", s, c[0], c[1], c[2], c[3]));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_roundtrip() {
        let scene = SceneConfig::benchmark([64, 64, 64], 8, 2);
        let text = scene.to_text();
        let back = SceneConfig::parse(&text).unwrap();
        assert_eq!(scene, back);
    }

    #[test]
    fn defaults_fill_missing_keys() {
        let scene = SceneConfig::parse("dims 32 32 32\n").unwrap();
        assert_eq!(scene.volume_dims, [32, 32, 32]);
        assert_eq!(scene.spp, 1);
        assert_eq!(scene.transfer, TransferFunction::default_colormap());
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(SceneConfig::parse("dims 1 2\n").is_err());
        assert!(SceneConfig::parse("nonsense 1\n").is_err());
        assert!(SceneConfig::parse("step -1\n").is_err());
    }
}
