//! Counter-based hashing for reproducible sample jitter. The same
//! (pixel, pass, seed, sample) tuple hashes to the same offsets on every
//! rank and every run, which is what makes redundant rendering and
//! distribution-invariance comparisons possible.

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
pub struct SampleJitter {
    /// Subpixel offset in [0,1)^2; (0.5, 0.5) when jitter is off.
    pub subpixel: (f32, f32),
    /// Phase of the ray-march sample comb in [0,1); 0.5 when jitter is off.
    pub phase: f32,
}

impl SampleJitter {
    pub const CENTERED: SampleJitter = SampleJitter {
        subpixel: (0.5, 0.5),
        phase: 0.5,
    };
}

fn unit_f32(h: u64) -> f32 {
    // Top 24 bits -> [0,1).
    (h >> 40) as f32 * (1.0 / (1u64 << 24) as f32)
}

/// Deterministic jitter for one camera sample.
pub fn sample_jitter(pixel_index: u64, accumulation_id: u32, seed: u64, sample: u32) -> SampleJitter {
    let base = mix(
        mix(pixel_index ^ 0x5bf0_3635_d1d3_c0a9)
            ^ mix(seed)
            ^ mix((accumulation_id as u64) << 32 | sample as u64),
    );
    SampleJitter {
        subpixel: (unit_f32(mix(base ^ 1)), unit_f32(mix(base ^ 2))),
        phase: unit_f32(mix(base ^ 3)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_distinct() {
        let a = sample_jitter(17, 3, 42, 0);
        let b = sample_jitter(17, 3, 42, 0);
        assert_eq!(a.subpixel, b.subpixel);
        assert_eq!(a.phase, b.phase);
        let c = sample_jitter(17, 3, 43, 0);
        assert!(a.phase != c.phase || a.subpixel != c.subpixel);
    }

    #[test]
    fn outputs_in_unit_range() {
        for i in 0..10_000u64 {
            let j = sample_jitter(i, (i % 7) as u32, 9, (i % 3) as u32);
            assert!((0.0..1.0).contains(&j.subpixel.0));
            assert!((0.0..1.0).contains(&j.subpixel.1));
            assert!((0.0..1.0).contains(&j.phase));
        }
    }
}
