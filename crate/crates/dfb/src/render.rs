//! The three frame-rendering drivers. Each submits rendered tiles and their
//! dependency-tree metadata for one pass of one frame; `begin_frame` /
//! `end_frame` bracket them from the harness so timing and the baseline
//! compositor can interleave their own phases.

use std::collections::BTreeSet;

use dfb_core::brick::{Brick, BrickGrid};
use dfb_core::camera::{Camera, PixelSampler};
use dfb_core::cull::{compute_tile_intersections, screen_rect};
use dfb_core::integrate::{integrate_brick, IntegrationParams};
use dfb_core::math::Box3;
use dfb_core::ops::over;
use dfb_core::plan::tile_brick_owner;
use dfb_core::tile::{Tile, TileDescriptor};

use crate::error::{DfbError, Result};
use crate::framebuffer::DistributedFrameBuffer;
use crate::scene::SceneConfig;
use crate::transport::RankId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RendererKind {
    Image,
    Data,
    Mixed,
}

impl std::str::FromStr for RendererKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "image" => Ok(RendererKind::Image),
            "data" => Ok(RendererKind::Data),
            "mixed" => Ok(RendererKind::Mixed),
            other => Err(format!("unknown renderer '{other}'")),
        }
    }
}

/// Benchmark scene shaped for a renderer: image-parallel replicates the
/// whole volume everywhere, data-parallel gives every brick one holder,
/// mixed-parallel replicates bricks `replication` ways.
pub fn benchmark_scene(
    kind: RendererKind,
    volume_dims: [u32; 3],
    num_ranks: u32,
    replication: u32,
) -> SceneConfig {
    let mut scene = SceneConfig::benchmark(volume_dims, num_ranks, replication);
    match kind {
        RendererKind::Image => {
            scene.brick_grid = [1, 1, 1];
            scene.replication = num_ranks;
        }
        RendererKind::Data => {
            scene.replication = 1;
        }
        RendererKind::Mixed => {}
    }
    scene
}

/// Per-pass sampling parameters.
#[derive(Debug, Clone, Copy)]
pub struct PassParams {
    pub accumulation_id: u32,
    pub seed: u64,
    pub jitter: bool,
}

/// Everything a rank needs to render: the scene, its generated bricks, and
/// all bricks' bounds.
pub struct RenderContext {
    pub scene: SceneConfig,
    pub grid: BrickGrid,
    pub local_bricks: Vec<Brick>,
    pub all_bounds: Vec<Box3>,
    pub rank: RankId,
}

impl RenderContext {
    pub fn new(scene: SceneConfig, rank: RankId, num_ranks: u32) -> Result<Self> {
        let grid = scene.build_grid(num_ranks)?;
        let local_bricks: Vec<Brick> = grid
            .bricks_on_rank(rank)
            .into_iter()
            .map(|id| grid.generate_brick(id))
            .collect();
        let all_bounds = grid.all_bounds();
        Ok(RenderContext {
            scene,
            grid,
            local_bricks,
            all_bounds,
            rank,
        })
    }

    pub fn integration(&self) -> IntegrationParams {
        let mut p = IntegrationParams::new(self.scene.step, self.grid.volume_dims);
        p.unit_step = 1.0;
        p
    }

    fn sampler(&self, width: u32, height: u32, pass: &PassParams, seed: u64) -> PixelSampler {
        PixelSampler {
            width,
            height,
            spp: self.scene.spp,
            jitter: pass.jitter || self.scene.spp > 1,
            seed,
            accumulation_id: pass.accumulation_id,
        }
    }
}

pub type Submit<'a> = dyn FnMut(Tile) -> Result<()> + 'a;

/// Image-parallel rendering: every rank holds the full scene; each tile is
/// rendered by `plan[tile]` ranks with distinct jitter seeds, and the tile
/// operation averages them (one renderer and plain pass-through by default).
pub fn render_frame_image_parallel(
    dfb: &DistributedFrameBuffer,
    ctx: &RenderContext,
    camera: &Camera,
    pass: &PassParams,
    plan: &[u32],
    submit: &mut Submit,
) -> Result<()> {
    if ctx.local_bricks.len() != 1 || ctx.grid.brick_count() != 1 {
        return Err(DfbError::Usage(
            "image-parallel rendering requires the full volume on every rank".into(),
        ));
    }
    if plan.len() != dfb.grid().tile_count() as usize {
        return Err(DfbError::Usage("redundancy plan length mismatch".into()));
    }
    let me = dfb.rank();
    let n = dfb.grid().num_ranks;
    let config = dfb.config();
    let frame = dfb.current_frame();
    let brick = &ctx.local_bricks[0];
    let params = ctx.integration();
    let bg = ctx.scene.premultiplied_background();

    for desc in dfb.grid().descriptors() {
        let k = plan[desc.tile_id as usize].max(1);
        for copy in 0..k {
            if (desc.owner_rank + copy) % n != me {
                continue;
            }
            // Distinct deterministic seed per redundant copy.
            let seed = pass
                .seed
                .wrapping_add(desc.tile_id as u64 * k as u64 + copy as u64);
            let mut p = *pass;
            p.jitter = pass.jitter || k > 1;
            let sampler = ctx.sampler(config.width, config.height, &p, seed);
            let mut tile = render_whole_volume_tile(brick, ctx, camera, &sampler, &params, desc, bg);
            tile.frame_index = frame;
            tile.generation = 0;
            tile.children = k;
            tile.accumulation_id = pass.accumulation_id;
            submit(tile)?;
        }
    }
    Ok(())
}

/// Sort-last data-parallel rendering: tile owners submit a background tile
/// declaring how many brick fragments to expect; every rank submits a
/// generation-1 fragment for each of its bricks that a pixel ray hits.
pub fn render_frame_data_parallel(
    dfb: &DistributedFrameBuffer,
    ctx: &RenderContext,
    camera: &Camera,
    pass: &PassParams,
    submit: &mut Submit,
) -> Result<()> {
    if (0..ctx.grid.brick_count()).any(|b| ctx.grid.shares(b).len() != 1) {
        return Err(DfbError::Usage(
            "data-parallel rendering requires exactly one holder per brick".into(),
        ));
    }
    render_sort_last(dfb, ctx, camera, pass, false, submit)
}

/// Mixed-parallel rendering: like data-parallel, but a rank renders a brick
/// for a tile only when it is the tile-brick owner among the ranks sharing
/// the brick. The dependency-tree shape is identical to data-parallel.
pub fn render_frame_mixed(
    dfb: &DistributedFrameBuffer,
    ctx: &RenderContext,
    camera: &Camera,
    pass: &PassParams,
    submit: &mut Submit,
) -> Result<()> {
    render_sort_last(dfb, ctx, camera, pass, true, submit)
}

fn render_sort_last(
    dfb: &DistributedFrameBuffer,
    ctx: &RenderContext,
    camera: &Camera,
    pass: &PassParams,
    mixed: bool,
    submit: &mut Submit,
) -> Result<()> {
    let me = dfb.rank();
    let config = dfb.config();
    let grid = dfb.grid();
    let frame = dfb.current_frame();
    let params = ctx.integration();
    let sampler = ctx.sampler(config.width, config.height, pass, pass.seed);
    let bg = ctx.scene.premultiplied_background();

    // Candidate tiles: the ones we own plus those touched by the
    // screen-space projection of our bricks.
    let mut candidates: BTreeSet<u32> = dfb.owned_tiles().iter().copied().collect();
    for brick in &ctx.local_bricks {
        match screen_rect(camera, brick.bounds, config.width, config.height) {
            Some(rect) => {
                let ts = config.tile_size as f32;
                let tx0 = (((rect.0 - 1.0) / ts).floor().max(0.0)) as u32;
                let ty0 = (((rect.1 - 1.0) / ts).floor().max(0.0)) as u32;
                let tx1 = (((rect.2 + 1.0) / ts).ceil() as u32).min(config.tiles_x());
                let ty1 = (((rect.3 + 1.0) / ts).ceil() as u32).min(config.tiles_y());
                for ty in ty0..ty1 {
                    for tx in tx0..tx1 {
                        candidates.insert(ty * config.tiles_x() + tx);
                    }
                }
            }
            // Conservative: bounds straddle the camera plane.
            None => {
                candidates.extend(0..grid.tile_count());
            }
        }
    }

    let local_bounds: Vec<Box3> = ctx.local_bricks.iter().map(|b| b.bounds).collect();
    for tile_id in candidates {
        let desc = *grid.descriptor(tile_id).unwrap();
        let is_owner = desc.owner_rank == me;

        // Owners need exact flags for every brick (the child count); other
        // ranks only need flags for their own bricks.
        let local_flags: Vec<bool> = if is_owner {
            let cull = compute_tile_intersections(camera, &sampler, desc.region, &ctx.all_bounds);
            let mut background = Tile::filled(tile_id, desc.region, bg, f32::INFINITY);
            background.frame_index = frame;
            background.generation = 0;
            background.children = cull.count;
            background.accumulation_id = pass.accumulation_id;
            submit(background)?;
            ctx.local_bricks
                .iter()
                .map(|b| cull.flags[b.id as usize])
                .collect()
        } else {
            compute_tile_intersections(camera, &sampler, desc.region, &local_bounds).flags
        };

        for (brick, &hit) in ctx.local_bricks.iter().zip(&local_flags) {
            if !hit {
                continue;
            }
            if mixed && tile_brick_owner(ctx.grid.shares(brick.id), tile_id)? != me {
                continue;
            }
            let mut fragment = render_brick_fragment(brick, ctx, camera, &sampler, &params, &desc);
            fragment.frame_index = frame;
            fragment.accumulation_id = pass.accumulation_id;
            submit(fragment)?;
        }
    }
    Ok(())
}

/// One tile rendered through the whole volume, composited over the
/// background (image-parallel path, no remote compositing).
fn render_whole_volume_tile(
    brick: &Brick,
    ctx: &RenderContext,
    camera: &Camera,
    sampler: &PixelSampler,
    params: &IntegrationParams,
    desc: &TileDescriptor,
    bg: [f32; 4],
) -> Tile {
    let region = desc.region;
    let mut tile = Tile::filled(desc.tile_id, region, [0.0; 4], f32::INFINITY);
    let spp = sampler.spp.max(1);
    let inv = 1.0 / spp as f32;
    let mut px_idx = 0usize;
    for py in region.y..region.y + region.h {
        for px in region.x..region.x + region.w {
            let mut sum = [0.0f32; 4];
            let mut depth = f32::INFINITY;
            for s in 0..spp {
                let (ray, phase) = sampler.ray(camera, px, py, s);
                let mut sample = [0.0f32; 4];
                if let Some(frag) = integrate_brick(&ray, brick, &ctx.scene.transfer, params, phase)
                {
                    sample = frag.rgba;
                    if frag.rgba[3] > 0.0 {
                        depth = depth.min(frag.entry_depth);
                    }
                }
                over(&mut sample, bg);
                for (acc, v) in sum.iter_mut().zip(sample) {
                    *acc += v;
                }
            }
            for (c, acc) in sum.iter().enumerate() {
                tile.color[px_idx * 4 + c] = acc * inv;
            }
            tile.depth[px_idx] = depth;
            px_idx += 1;
        }
    }
    tile
}

/// One brick's generation-1 fragment for a tile. Pixels whose rays miss the
/// brick carry zero alpha at infinite depth.
fn render_brick_fragment(
    brick: &Brick,
    ctx: &RenderContext,
    camera: &Camera,
    sampler: &PixelSampler,
    params: &IntegrationParams,
    desc: &TileDescriptor,
) -> Tile {
    let region = desc.region;
    let mut tile = Tile::filled(desc.tile_id, region, [0.0; 4], f32::INFINITY);
    tile.generation = 1;
    tile.children = 0;
    let spp = sampler.spp.max(1);
    let inv = 1.0 / spp as f32;
    let mut px_idx = 0usize;
    for py in region.y..region.y + region.h {
        for px in region.x..region.x + region.w {
            let mut sum = [0.0f32; 4];
            let mut depth = f32::INFINITY;
            for s in 0..spp {
                let (ray, phase) = sampler.ray(camera, px, py, s);
                if let Some(frag) = integrate_brick(&ray, brick, &ctx.scene.transfer, params, phase)
                {
                    for (acc, v) in sum.iter_mut().zip(frag.rgba) {
                        *acc += v;
                    }
                    depth = depth.min(frag.entry_depth);
                }
            }
            for (c, acc) in sum.iter().enumerate() {
                tile.color[px_idx * 4 + c] = acc * inv;
            }
            tile.depth[px_idx] = depth;
            px_idx += 1;
        }
    }
    tile
}
