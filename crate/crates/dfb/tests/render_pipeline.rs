//! End-to-end rendering through the distributed framebuffer at small scale:
//! the same scene must produce the same image no matter how work and data
//! are distributed.

use std::sync::Arc;
use std::time::Duration;

use dfb::framebuffer::{DfbOptions, DistributedFrameBuffer};
use dfb::harness::{run_inproc, RunConfig, TransportKind};
use dfb::messaging::{CompressionPolicy, Messenger, ObjectId};
use dfb::render::{
    benchmark_scene, render_frame_data_parallel, render_frame_image_parallel, PassParams,
    RenderContext, RendererKind,
};
use dfb::transport::inproc::{inproc_mesh, InprocOptions};
use dfb_core::camera::{orbit_camera, PixelSampler};
use dfb_core::integrate::integrate_brick;
use dfb_core::ops::{over, AlphaBlendOp, ImageParallelOp, TileOperation};
use dfb_core::tile::{ColorFormat, FrameConfig, Tile, TileDescriptor};

fn base_config(kind: RendererKind, ranks: u32, replication: u32) -> RunConfig {
    RunConfig {
        ranks,
        transport: TransportKind::Inproc,
        renderer: kind,
        replication,
        width: 128,
        height: 128,
        tile_size: 64,
        frames: 1,
        format: ColorFormat::RgbaF32,
        compression: CompressionPolicy::Off,
        volume_dims: [32, 32, 32],
        seed: 7,
        ..RunConfig::default()
    }
}

fn float_image(cfg: &RunConfig) -> Vec<f32> {
    let out = run_inproc(cfg).expect("benchmark runs");
    match out.images.into_iter().next().flatten() {
        Some(dfb::framebuffer::DisplayImage::RgbaF32 { pixels, .. }) => pixels,
        other => panic!("expected an f32 image, got {other:?}"),
    }
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[test]
fn data_parallel_matches_single_rank() {
    let single = float_image(&base_config(RendererKind::Data, 1, 1));
    let four = float_image(&base_config(RendererKind::Data, 4, 1));
    let diff = max_abs_diff(&single, &four);
    assert!(diff <= 1e-4, "max channel diff {diff}");
}

#[test]
fn mixed_replication_is_bitwise_stable() {
    let data = float_image(&base_config(RendererKind::Data, 8, 1));
    let mixed_r1 = float_image(&base_config(RendererKind::Mixed, 8, 1));
    let mixed_r2 = float_image(&base_config(RendererKind::Mixed, 8, 2));
    assert_eq!(data, mixed_r1, "replication 1 must equal data-parallel");
    assert_eq!(data, mixed_r2, "replication 2 must equal data-parallel");
}

#[test]
fn mixed_on_fully_replicated_data_matches_image_parallel() {
    let image = float_image(&base_config(RendererKind::Image, 4, 4));
    let mut cfg = base_config(RendererKind::Mixed, 4, 4);
    cfg.scene = Some({
        let mut s = benchmark_scene(RendererKind::Image, [32, 32, 32], 4, 4);
        s.replication = 4;
        s
    });
    let mixed = float_image(&cfg);
    let diff = max_abs_diff(&image, &mixed);
    assert!(diff <= 1e-4, "max channel diff {diff}");
}

#[test]
fn image_parallel_is_rank_count_invariant() {
    let one = float_image(&base_config(RendererKind::Image, 1, 1));
    let four = float_image(&base_config(RendererKind::Image, 4, 4));
    assert_eq!(one, four);
}

#[test]
fn tile_size_does_not_change_the_image() {
    let t64 = float_image(&base_config(RendererKind::Data, 2, 1));
    let mut cfg = base_config(RendererKind::Data, 2, 1);
    cfg.tile_size = 32;
    let t32 = float_image(&cfg);
    let diff = max_abs_diff(&t64, &t32);
    assert!(diff <= 1e-4, "max channel diff {diff}");
}

#[test]
fn dependency_trees_account_for_every_fragment() {
    // Global accounting: the children count declared by each background
    // tile equals the number of generation-1 fragments submitted for that
    // tile across all ranks.
    let ranks = 4u32;
    let scene = benchmark_scene(RendererKind::Data, [32, 32, 32], ranks, 1);
    let mesh = inproc_mesh(ranks, InprocOptions::default());
    let mut handles = Vec::new();
    for t in mesh {
        let scene = scene.clone();
        handles.push(std::thread::spawn(move || -> Vec<Tile> {
            let msg = Messenger::with_options(
                Arc::new(t),
                CompressionPolicy::Off,
                Duration::from_secs(10),
                false,
            );
            let config = FrameConfig {
                width: 128,
                height: 128,
                tile_size: 32,
                color_format: ColorFormat::Rgba8,
                accumulation_enabled: false,
            };
            let dfb = DistributedFrameBuffer::new(
                msg.clone(),
                config,
                ObjectId(20),
                DfbOptions::default(),
            )
            .unwrap();
            let factory = |_: &TileDescriptor| -> Box<dyn TileOperation> {
                Box::new(AlphaBlendOp::new())
            };
            dfb.begin_frame(&factory, Vec::new(), 0).unwrap();
            let ctx = RenderContext::new(scene, msg.rank(), ranks).unwrap();
            let camera = orbit_camera(0, 1, ctx.grid.volume_bounds(), 60.0, 1.0);
            let pass = PassParams {
                accumulation_id: 0,
                seed: 7,
                jitter: false,
            };
            let mut captured = Vec::new();
            {
                let mut submit = |t: Tile| {
                    captured.push(t.clone());
                    dfb.set_tile(t)
                };
                render_frame_data_parallel(&dfb, &ctx, &camera, &pass, &mut submit).unwrap();
            }
            dfb.end_frame().unwrap();
            msg.barrier().unwrap();
            captured
        }));
    }
    let mut all: Vec<Tile> = Vec::new();
    for h in handles {
        all.extend(h.join().unwrap());
    }
    let tile_count = 16u32;
    for tile_id in 0..tile_count {
        let declared: u32 = all
            .iter()
            .filter(|t| t.tile_id == tile_id && t.generation == 0)
            .map(|t| t.children)
            .sum();
        let backgrounds = all
            .iter()
            .filter(|t| t.tile_id == tile_id && t.generation == 0)
            .count();
        let fragments = all
            .iter()
            .filter(|t| t.tile_id == tile_id && t.generation == 1)
            .count() as u32;
        assert_eq!(backgrounds, 1, "tile {tile_id} has one background");
        assert_eq!(declared, fragments, "tile {tile_id}");
    }
}

#[test]
fn redundant_tiles_average_the_seed_renders() {
    // Redundancy 2 on every tile at one rank: both copies land on rank 0
    // with seeds tile*2 and tile*2+1; the finished image must equal the
    // per-pixel mean of the two jittered renders.
    let scene = benchmark_scene(RendererKind::Image, [32, 32, 32], 1, 1);
    let mesh = inproc_mesh(1, InprocOptions::default());
    let msg = Messenger::with_options(
        Arc::new(mesh.into_iter().next().unwrap()),
        CompressionPolicy::Off,
        Duration::from_secs(10),
        false,
    );
    let config = FrameConfig {
        width: 128,
        height: 128,
        tile_size: 64,
        color_format: ColorFormat::RgbaF32,
        accumulation_enabled: false,
    };
    let dfb =
        DistributedFrameBuffer::new(msg.clone(), config, ObjectId(21), DfbOptions::default())
            .unwrap();
    let plan = vec![2u32; dfb.grid().tile_count() as usize];
    let factory = |_: &TileDescriptor| -> Box<dyn TileOperation> {
        Box::new(ImageParallelOp::new(2))
    };
    dfb.begin_frame(&factory, Vec::new(), 0).unwrap();
    let ctx = RenderContext::new(scene.clone(), 0, 1).unwrap();
    let camera = orbit_camera(0, 1, ctx.grid.volume_bounds(), 60.0, 1.0);
    let seed = 7u64;
    let pass = PassParams {
        accumulation_id: 0,
        seed,
        jitter: true,
    };
    {
        let mut submit = |t: Tile| dfb.set_tile(t);
        render_frame_image_parallel(&dfb, &ctx, &camera, &pass, &plan, &mut submit).unwrap();
    }
    let image = match dfb.end_frame().unwrap() {
        Some(dfb::framebuffer::DisplayImage::RgbaF32 { pixels, .. }) => pixels,
        other => panic!("expected f32 image, got {other:?}"),
    };

    // Oracle: integrate each copy's rays directly and average.
    let brick = &ctx.local_bricks[0];
    let params = ctx.integration();
    let bg = scene.premultiplied_background();
    let mut worst = 0.0f32;
    for desc in dfb.grid().descriptors() {
        let r = desc.region;
        for py in r.y..r.y + r.h {
            for px in r.x..r.x + r.w {
                let mut mean = [0.0f64; 4];
                for copy in 0..2u64 {
                    let sampler = PixelSampler {
                        width: 128,
                        height: 128,
                        spp: 1,
                        jitter: true,
                        seed: seed.wrapping_add(desc.tile_id as u64 * 2 + copy),
                        accumulation_id: 0,
                    };
                    let (ray, phase) = sampler.ray(&camera, px, py, 0);
                    let mut sample = [0.0f32; 4];
                    if let Some(frag) =
                        integrate_brick(&ray, brick, &scene.transfer, &params, phase)
                    {
                        sample = frag.rgba;
                    }
                    over(&mut sample, bg);
                    for c in 0..4 {
                        mean[c] += sample[c] as f64 * 0.5;
                    }
                }
                let at = ((py as usize * 128) + px as usize) * 4;
                for c in 0..4 {
                    worst = worst.max((image[at + c] as f64 - mean[c]).abs() as f32);
                }
            }
        }
    }
    assert!(worst <= 1e-6, "max diff from seed-mean oracle: {worst}");
}

#[test]
fn accumulated_error_decreases_with_pass_count() {
    // Jittered sampling: the accumulated image's distance to a converged
    // reference shrinks as passes accumulate.
    let scene = benchmark_scene(RendererKind::Image, [32, 32, 32], 1, 1);
    let mesh = inproc_mesh(1, InprocOptions::default());
    let msg = Messenger::with_options(
        Arc::new(mesh.into_iter().next().unwrap()),
        CompressionPolicy::Off,
        Duration::from_secs(10),
        false,
    );
    let config = FrameConfig {
        width: 128,
        height: 128,
        tile_size: 64,
        color_format: ColorFormat::RgbaF32,
        accumulation_enabled: true,
    };
    let dfb =
        DistributedFrameBuffer::new(msg.clone(), config, ObjectId(23), DfbOptions::default())
            .unwrap();
    let ctx = RenderContext::new(scene, 0, 1).unwrap();
    let camera = orbit_camera(0, 1, ctx.grid.volume_bounds(), 60.0, 1.0);
    let factory =
        |_: &TileDescriptor| -> Box<dyn TileOperation> { Box::new(ImageParallelOp::new(1)) };
    let plan = vec![1u32; dfb.grid().tile_count() as usize];

    let total = 48u32;
    let mut snapshots = std::collections::HashMap::new();
    for pass in 0..total {
        dfb.begin_frame(&factory, Vec::new(), pass).unwrap();
        let pp = PassParams {
            accumulation_id: pass,
            seed: 13,
            jitter: true,
        };
        let mut submit = |t: Tile| dfb.set_tile(t);
        render_frame_image_parallel(&dfb, &ctx, &camera, &pp, &plan, &mut submit).unwrap();
        let image = match dfb.end_frame().unwrap() {
            Some(dfb::framebuffer::DisplayImage::RgbaF32 { pixels, .. }) => pixels,
            other => panic!("expected f32 image, got {other:?}"),
        };
        if [2, 8, 32, total].contains(&(pass + 1)) {
            snapshots.insert(pass + 1, image);
        }
    }
    let reference = snapshots.remove(&total).unwrap();
    let rms = |img: &[f32]| -> f64 {
        let sum: f64 = img
            .iter()
            .zip(&reference)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum();
        (sum / img.len() as f64).sqrt()
    };
    let e2 = rms(&snapshots[&2]);
    let e8 = rms(&snapshots[&8]);
    let e32 = rms(&snapshots[&32]);
    assert!(e2 > e8 && e8 > e32, "errors not decreasing: {e2:.3e} {e8:.3e} {e32:.3e}");
}

#[test]
fn tiles_finalize_while_others_wait_for_input() {
    // Observable overlap: with >= 16 tiles on a multi-rank data-parallel
    // run, some tile finalizes before some other tile has received its
    // first input.
    let ranks = 4u32;
    let scene = benchmark_scene(RendererKind::Data, [32, 32, 32], ranks, 1);
    let mesh = inproc_mesh(ranks, InprocOptions::default());
    let mut handles = Vec::new();
    for t in mesh {
        let scene = scene.clone();
        handles.push(std::thread::spawn(move || {
            let msg = Messenger::with_options(
                Arc::new(t),
                CompressionPolicy::Off,
                Duration::from_secs(10),
                false,
            );
            let config = FrameConfig {
                width: 256,
                height: 256,
                tile_size: 64,
                color_format: ColorFormat::Rgba8,
                accumulation_enabled: false,
            };
            let dfb = DistributedFrameBuffer::new(
                msg.clone(),
                config,
                ObjectId(22),
                DfbOptions::default(),
            )
            .unwrap();
            let factory = |_: &TileDescriptor| -> Box<dyn TileOperation> {
                Box::new(AlphaBlendOp::new())
            };
            dfb.begin_frame(&factory, Vec::new(), 0).unwrap();
            let ctx = RenderContext::new(scene, msg.rank(), ranks).unwrap();
            let camera = orbit_camera(0, 1, ctx.grid.volume_bounds(), 60.0, 1.0);
            let pass = PassParams {
                accumulation_id: 0,
                seed: 7,
                jitter: false,
            };
            {
                let mut submit = |t: Tile| dfb.set_tile(t);
                render_frame_data_parallel(&dfb, &ctx, &camera, &pass, &mut submit).unwrap();
            }
            dfb.end_frame().unwrap();
            let timeline = dfb.timeline();
            msg.barrier().unwrap();
            timeline
        }));
    }
    let mut first_inputs = Vec::new();
    let mut finalized = Vec::new();
    for h in handles {
        let t = h.join().unwrap();
        first_inputs.extend(t.first_input.into_iter().flatten());
        finalized.extend(t.finalized.into_iter().flatten());
    }
    assert!(first_inputs.len() >= 16, "expected >= 16 tiles");
    let earliest_finalize = finalized.iter().min().unwrap();
    let latest_first_input = first_inputs.iter().max().unwrap();
    assert!(
        earliest_finalize < latest_first_input,
        "no overlap observed: every tile received input before any finalized"
    );
}
