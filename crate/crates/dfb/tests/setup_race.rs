//! Repeated multi-rank runs under thread-scheduling noise. Guards the
//! collective-setup contract: a rank that is slow to construct its
//! framebuffer must never lose tiles posted by faster ranks.

use std::time::Duration;

use dfb::harness::{run_inproc, RunConfig, TransportKind};
use dfb::messaging::CompressionPolicy;
use dfb::render::RendererKind;
use dfb_core::tile::ColorFormat;

#[test]
fn repeated_runs_never_starve() {
    for round in 0..6 {
        for ranks in [2u32, 4, 8] {
            let cfg = RunConfig {
                ranks,
                transport: TransportKind::Inproc,
                renderer: RendererKind::Data,
                replication: 1,
                width: 256,
                height: 256,
                tile_size: 64,
                frames: 2,
                format: ColorFormat::Rgba8,
                compression: CompressionPolicy::Off,
                volume_dims: [32, 32, 32],
                seed: round,
                frame_deadline: Duration::from_secs(10),
                ..RunConfig::default()
            };
            let out = run_inproc(&cfg)
                .unwrap_or_else(|e| panic!("round {round}, {ranks} ranks: {e}"));
            assert!(out.images[0].is_some());
        }
    }
}
