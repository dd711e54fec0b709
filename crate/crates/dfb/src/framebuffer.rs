//! The distributed framebuffer: per-rank tile ownership, asynchronous tile
//! routing, tile-operation dispatch on a worker pool, accumulation and
//! variance tracking, the pixel-op pipeline, final-pixel staging, and the
//! end-of-frame gather to the display rank.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};

use dfb_core::accum::AccumTile;
use dfb_core::ops::{ProcessResult, TileOperation};
use dfb_core::pixel::{encode_display_pixels, tone_map, ToneMapParams};
use dfb_core::tile::{ColorFormat, FrameConfig, PixelRect, Tile, TileDescriptor, TileGrid};
use dfb_core::wire::{decode_tile, encode_tile};

use crate::error::{DfbError, Result};
use crate::messaging::{compress, decompress, Messenger, ObjectId};
use crate::transport::RankId;

/// How finished pixels reach the display rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinalRoute {
    /// Stage per-tile bytes and move them with one end-of-frame gather.
    Gather,
    /// Post each finished tile to the display as soon as it is ready
    /// (debug path; more messages, same image).
    PerTile,
}

#[derive(Debug, Clone)]
pub struct DfbOptions {
    pub workers: usize,
    pub frame_deadline: Duration,
    pub final_route: FinalRoute,
    pub display_rank: RankId,
}

impl Default for DfbOptions {
    fn default() -> Self {
        DfbOptions {
            workers: 2,
            frame_deadline: Duration::from_secs(30),
            final_route: FinalRoute::Gather,
            display_rank: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DisplayImage {
    Rgba8 {
        width: u32,
        height: u32,
        pixels: Vec<u8>,
    },
    RgbaF32 {
        width: u32,
        height: u32,
        pixels: Vec<f32>,
    },
}

impl DisplayImage {
    fn allocate(config: &FrameConfig) -> Option<DisplayImage> {
        match config.color_format {
            ColorFormat::Rgba8 => Some(DisplayImage::Rgba8 {
                width: config.width,
                height: config.height,
                pixels: vec![0; (config.width * config.height * 4) as usize],
            }),
            ColorFormat::RgbaF32 => Some(DisplayImage::RgbaF32 {
                width: config.width,
                height: config.height,
                pixels: vec![0.0; (config.width * config.height * 4) as usize],
            }),
            ColorFormat::None => None,
        }
    }

    fn write_region(&mut self, region: PixelRect, bytes: &[u8]) {
        match self {
            DisplayImage::Rgba8 { width, pixels, .. } => {
                let row_bytes = region.w as usize * 4;
                for row in 0..region.h as usize {
                    let dst = ((region.y as usize + row) * *width as usize + region.x as usize) * 4;
                    pixels[dst..dst + row_bytes]
                        .copy_from_slice(&bytes[row * row_bytes..(row + 1) * row_bytes]);
                }
            }
            DisplayImage::RgbaF32 { width, pixels, .. } => {
                let row_floats = region.w as usize * 4;
                for row in 0..region.h as usize {
                    let dst = ((region.y as usize + row) * *width as usize + region.x as usize) * 4;
                    for i in 0..row_floats {
                        let at = (row * row_floats + i) * 4;
                        pixels[dst + i] =
                            f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
                    }
                }
            }
        }
    }

    /// Raw RGBA8 bytes (converting f32 images through the display encoding).
    pub fn to_rgba8(&self) -> (u32, u32, Vec<u8>) {
        match self {
            DisplayImage::Rgba8 { width, height, pixels } => (*width, *height, pixels.clone()),
            DisplayImage::RgbaF32 { width, height, pixels } => (
                *width,
                *height,
                encode_display_pixels(pixels, ColorFormat::Rgba8),
            ),
        }
    }
}

/// Renderer-independent per-tile post-process, run on the tile owner after
/// the tile operation (and after accumulation).
pub trait PixelOp: Send + Sync {
    fn process(&self, region: PixelRect, color: &mut [f32]);
}

/// The stock exposure/gamma tone map.
pub struct ToneMapOp(pub ToneMapParams);

impl PixelOp for ToneMapOp {
    fn process(&self, _region: PixelRect, color: &mut [f32]) {
        tone_map(color, self.0);
    }
}

pub type OpFactory<'a> = dyn Fn(&TileDescriptor) -> Box<dyn TileOperation> + 'a;

/// Per-frame accounting, readable after `end_frame`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameStats {
    pub tiles_posted: u64,
    pub tiles_processed: u64,
    pub tiles_finalized: u64,
    pub queued_future: u64,
    /// Bytes this rank contributed to the end-of-frame gather.
    pub gather_payload_bytes: u64,
}

/// Per-tile instrumentation timestamps for one frame.
#[derive(Debug, Clone, Default)]
pub struct FrameTimeline {
    pub first_input: Vec<Option<Instant>>,
    pub finalized: Vec<Option<Instant>>,
}

struct TileSlot {
    /// None while a worker is inside `process` for this tile.
    op: Option<Box<dyn TileOperation>>,
    backlog: VecDeque<(Tile, RankId)>,
    completed: bool,
}

struct FrameState {
    frame_index: u32,
    frame_open: bool,
    accumulation_id: u32,
    frames_pending: u32,
    /// Inputs dispatched to the worker pool but not yet consumed.
    in_flight: u32,
    slots: Vec<TileSlot>,
    accum: Vec<AccumTile>,
    pixel_ops: Vec<Arc<dyn PixelOp>>,
    gather_stage: Vec<Vec<u8>>,
    pending_future: Vec<(Tile, RankId)>,
    pending_display: Vec<(u32, u32, Vec<u8>)>,
    display_image: Option<DisplayImage>,
    display_expected: u32,
    display_received: u32,
    stats: FrameStats,
    timeline: FrameTimeline,
    error: Option<DfbError>,
}

enum Work {
    Input(Tile, RankId),
    Stop,
}

struct Shared {
    msg: Arc<Messenger>,
    grid: TileGrid,
    options: DfbOptions,
    object: ObjectId,
    display_object: ObjectId,
    owned: Vec<u32>,
    local_index: HashMap<u32, usize>,
    state: Mutex<FrameState>,
    cv: Condvar,
    work_tx: Sender<Work>,
}

pub struct DistributedFrameBuffer {
    shared: Arc<Shared>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

static NEXT_DFB_ID: AtomicU64 = AtomicU64::new(0x0df8_0000);

/// A process-locally fresh object id pair; all ranks create framebuffers in
/// the same order, so ids line up across ranks.
pub fn next_framebuffer_id() -> ObjectId {
    ObjectId(NEXT_DFB_ID.fetch_add(2, Ordering::Relaxed))
}

impl DistributedFrameBuffer {
    /// Create the framebuffer and register it with the messaging layer under
    /// `object` (and `object + 1` for display traffic).
    ///
    /// Creation is collective: every rank must construct the framebuffer,
    /// and no rank returns before all ranks have registered their handlers.
    /// Without this, an early rank could post tiles that land in the
    /// unknown-receiver sink of a rank still setting up.
    pub fn new(
        msg: Arc<Messenger>,
        config: FrameConfig,
        object: ObjectId,
        options: DfbOptions,
    ) -> Result<Arc<Self>> {
        config.validate()?;
        if options.display_rank >= msg.size() {
            return Err(DfbError::Config(format!(
                "display rank {} out of range",
                options.display_rank
            )));
        }
        let grid = TileGrid::new(config, msg.size())?;
        let rank = msg.rank();
        let owned: Vec<u32> = grid.owned_by(rank).map(|d| d.tile_id).collect();
        let local_index: HashMap<u32, usize> =
            owned.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        let accum: Vec<AccumTile> = owned
            .iter()
            .map(|&t| AccumTile::new(grid.descriptor(t).unwrap().region.area()))
            .collect();

        let (work_tx, work_rx) = unbounded();
        let slots = owned
            .iter()
            .map(|_| TileSlot {
                op: None,
                backlog: VecDeque::new(),
                completed: false,
            })
            .collect();

        let shared = Arc::new(Shared {
            msg: msg.clone(),
            grid,
            options: options.clone(),
            object,
            display_object: ObjectId(object.0 + 1),
            owned,
            local_index,
            state: Mutex::new(FrameState {
                frame_index: 0,
                frame_open: false,
                accumulation_id: 0,
                frames_pending: 0,
                in_flight: 0,
                slots,
                accum,
                pixel_ops: Vec::new(),
                gather_stage: Vec::new(),
                pending_future: Vec::new(),
                pending_display: Vec::new(),
                display_image: None,
                display_expected: 0,
                display_received: 0,
                stats: FrameStats::default(),
                timeline: FrameTimeline::default(),
                error: None,
            }),
            cv: Condvar::new(),
            work_tx,
        });

        // Incoming rendered tiles land on the worker queue.
        let h = shared.clone();
        msg.register(object, move |src, payload| match decode_tile(&payload) {
            Ok(tile) => h.route_incoming(tile, src),
            Err(e) => h.set_error(DfbError::Protocol(format!("bad tile payload: {e}"))),
        })?;

        // Finished display pixels (per-tile debug route).
        let h = shared.clone();
        msg.register(shared.display_object, move |_src, payload| {
            h.route_display_bytes(payload);
        })?;

        let mut workers = Vec::new();
        for i in 0..options.workers.max(1) {
            let rx: Receiver<Work> = work_rx.clone();
            let h = shared.clone();
            workers.push(
                std::thread::Builder::new()
                    .name(format!("dfb-worker-{rank}-{i}"))
                    .spawn(move || {
                        while let Ok(work) = rx.recv() {
                            match work {
                                Work::Input(tile, src) => h.process_input(tile, src),
                                Work::Stop => return,
                            }
                        }
                    })
                    .expect("spawn dfb worker"),
            );
        }

        msg.barrier()?;
        Ok(Arc::new(DistributedFrameBuffer {
            shared,
            workers: Mutex::new(workers),
        }))
    }

    pub fn config(&self) -> &FrameConfig {
        &self.shared.grid.config
    }

    pub fn grid(&self) -> &TileGrid {
        &self.shared.grid
    }

    pub fn rank(&self) -> RankId {
        self.shared.msg.rank()
    }

    pub fn display_rank(&self) -> RankId {
        self.shared.options.display_rank
    }

    pub fn owned_tiles(&self) -> &[u32] {
        &self.shared.owned
    }

    pub fn current_frame(&self) -> u32 {
        self.shared.state.lock().unwrap().frame_index
    }

    /// Begin a frame: install a fresh tile operation per owned tile and
    /// replay any tiles that arrived early for this frame.
    pub fn begin_frame(
        &self,
        factory: &OpFactory,
        pixel_ops: Vec<Arc<dyn PixelOp>>,
        accumulation_id: u32,
    ) -> Result<()> {
        let shared = &self.shared;
        let mut st = shared.state.lock().unwrap();
        if st.frame_open {
            return Err(DfbError::Usage(
                "begin_frame while the previous frame is incomplete".into(),
            ));
        }
        st.frame_index += 1;
        st.frame_open = true;
        st.accumulation_id = accumulation_id;
        st.frames_pending = shared.owned.len() as u32;
        st.pixel_ops = pixel_ops;
        st.error = None;
        st.stats = FrameStats::default();
        st.timeline = FrameTimeline {
            first_input: vec![None; shared.owned.len()],
            finalized: vec![None; shared.owned.len()],
        };
        st.gather_stage = vec![Vec::new(); shared.owned.len()];
        if shared.grid.config.accumulation_enabled && accumulation_id == 0 {
            for a in &mut st.accum {
                a.reset();
            }
        }
        for (i, &tile_id) in shared.owned.iter().enumerate() {
            let desc = shared.grid.descriptor(tile_id).unwrap();
            let mut op = factory(desc);
            op.new_frame();
            st.slots[i].op = Some(op);
            st.slots[i].completed = false;
            st.slots[i].backlog.clear();
        }
        let is_display = shared.msg.rank() == shared.options.display_rank;
        st.display_image = if is_display {
            DisplayImage::allocate(&shared.grid.config)
        } else {
            None
        };
        st.display_expected = if is_display
            && shared.options.final_route == FinalRoute::PerTile
            && shared.grid.config.color_format != ColorFormat::None
        {
            shared.grid.tile_count()
        } else {
            0
        };
        st.display_received = 0;

        // Replay early arrivals for this frame, preserving arrival order.
        let current = st.frame_index;
        let pending = std::mem::take(&mut st.pending_future);
        let (replay, keep): (Vec<_>, Vec<_>) = pending
            .into_iter()
            .partition(|(t, _)| t.frame_index == current);
        st.pending_future = keep;
        st.in_flight += replay.len() as u32;
        let pending_display = std::mem::take(&mut st.pending_display);
        for (frame, tile_id, bytes) in pending_display {
            if frame == current {
                shared.apply_display_bytes(&mut st, tile_id, &bytes);
            } else {
                st.pending_display.push((frame, tile_id, bytes));
            }
        }
        drop(st);
        for (tile, src) in replay {
            let _ = shared.work_tx.send(Work::Input(tile, src));
        }
        Ok(())
    }

    /// Hand a rendered tile to the framebuffer. Owners process locally;
    /// anything else is serialized and posted to the owner.
    pub fn set_tile(&self, tile: Tile) -> Result<()> {
        let shared = &self.shared;
        let desc = *shared
            .grid
            .descriptor(tile.tile_id)
            .ok_or_else(|| DfbError::Usage(format!("unknown tile id {}", tile.tile_id)))?;
        {
            let mut st = shared.state.lock().unwrap();
            if !st.frame_open {
                return Err(DfbError::Usage("set_tile outside begin/end frame".into()));
            }
            if tile.frame_index < st.frame_index {
                return Err(DfbError::Protocol(format!(
                    "stale tile for frame {} during frame {}",
                    tile.frame_index, st.frame_index
                )));
            }
            if tile.frame_index > st.frame_index {
                return Err(DfbError::Usage(format!(
                    "tile for future frame {} posted during frame {}",
                    tile.frame_index, st.frame_index
                )));
            }
            if tile.region != desc.region {
                return Err(DfbError::Usage(format!(
                    "tile {} region {:?} does not match descriptor {:?}",
                    tile.tile_id, tile.region, desc.region
                )));
            }
            st.stats.tiles_posted += 1;
            if desc.owner_rank == shared.msg.rank() {
                st.in_flight += 1;
            }
        }
        let me = shared.msg.rank();
        if desc.owner_rank == me {
            let _ = shared.work_tx.send(Work::Input(tile, me));
            Ok(())
        } else {
            shared.msg.post(desc.owner_rank, shared.object, encode_tile(&tile))
        }
    }

    /// Per-tile error estimate from the accumulation variance buffers.
    pub fn tile_error(&self, tile_id: u32) -> Result<f32> {
        let shared = &self.shared;
        if !shared.grid.config.accumulation_enabled {
            return Err(DfbError::Usage("accumulation is disabled".into()));
        }
        let idx = *shared
            .local_index
            .get(&tile_id)
            .ok_or_else(|| DfbError::Usage(format!("tile {tile_id} not owned by this rank")))?;
        let st = shared.state.lock().unwrap();
        st.accum[idx]
            .tile_error()
            .ok_or_else(|| DfbError::Usage("tile error undefined with fewer than 2 passes".into()))
    }

    /// All per-tile errors on this rank (tile id, error), for redundancy
    /// planning.
    pub fn owned_tile_errors(&self) -> Result<Vec<(u32, f32)>> {
        let shared = &self.shared;
        let st = shared.state.lock().unwrap();
        shared
            .owned
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                st.accum[i]
                    .tile_error()
                    .map(|e| (t, e))
                    .ok_or_else(|| DfbError::Usage("fewer than 2 passes".into()))
            })
            .collect()
    }

    /// Instrumentation: per-owned-tile first-input and finalized timestamps
    /// of the frame that just ended.
    pub fn timeline(&self) -> FrameTimeline {
        self.shared.state.lock().unwrap().timeline.clone()
    }

    pub fn frame_stats(&self) -> FrameStats {
        self.shared.state.lock().unwrap().stats
    }

    /// Block until every owned tile finalized, then move final pixels to the
    /// display rank. Returns the display image on the display rank (unless
    /// the format is NONE).
    pub fn end_frame(&self) -> Result<Option<DisplayImage>> {
        let shared = &self.shared;
        let deadline = Instant::now() + shared.options.frame_deadline;
        let me = shared.msg.rank();
        let is_display = me == shared.options.display_rank;

        let mut st = shared.state.lock().unwrap();
        if !st.frame_open {
            return Err(DfbError::Usage("end_frame without begin_frame".into()));
        }
        loop {
            if let Some(err) = st.error.take() {
                st.frame_open = false;
                return Err(err);
            }
            let display_done = st.display_received >= st.display_expected;
            if st.frames_pending == 0 && st.in_flight == 0 && display_done {
                break;
            }
            let now = Instant::now();
            if now >= deadline {
                let report = self.starvation_report(&st);
                st.frame_open = false;
                return Err(DfbError::Starvation(report));
            }
            let (next, _) = shared.cv.wait_timeout(st, deadline - now).unwrap();
            st = next;
        }
        st.stats.queued_future = st.pending_future.len() as u64;

        match shared.options.final_route {
            FinalRoute::Gather => {
                let payload = Self::stage_payload(shared, &st);
                st.stats.gather_payload_bytes = payload.len() as u64;
                drop(st);
                let gathered = shared.msg.gather(shared.options.display_rank, &payload)?;
                st = shared.state.lock().unwrap();
                if let Some(result) = gathered {
                    debug_assert!(is_display);
                    self.decode_gather(&mut st, &result)?;
                }
            }
            FinalRoute::PerTile => {
                // Completion sync: everyone has finalized and posted; the
                // display only reaches the barrier after receiving all tiles.
                drop(st);
                shared.msg.barrier()?;
                st = shared.state.lock().unwrap();
            }
        }

        st.frame_open = false;
        Ok(st.display_image.take())
    }

    fn starvation_report(&self, st: &FrameState) -> String {
        let mut parts = Vec::new();
        for (i, &tile_id) in self.shared.owned.iter().enumerate() {
            if st.slots[i].completed {
                continue;
            }
            if let Some(op) = st.slots[i].op.as_ref() {
                let p = op.pending();
                parts.push(format!(
                    "tile {tile_id}: {} inputs received, generation {} missing {}",
                    p.received, p.current_generation, p.missing_in_generation
                ));
            } else {
                parts.push(format!("tile {tile_id}: processing"));
            }
        }
        if st.display_expected > st.display_received {
            parts.push(format!(
                "display: {}/{} final tiles received",
                st.display_received, st.display_expected
            ));
        }
        format!(
            "frame {} incomplete after {:?}: {} ({} unknown-receiver envelopes on this rank)",
            st.frame_index,
            self.shared.options.frame_deadline,
            parts.join("; "),
            self.shared.msg.unknown_receiver_count()
        )
    }

    /// This rank's gather contribution: every owned tile's encoded final
    /// pixels in tile-id order, optionally compressed as one block.
    /// NONE contributes nothing at all.
    fn stage_payload(shared: &Shared, st: &FrameState) -> Vec<u8> {
        if shared.grid.config.color_format == ColorFormat::None {
            return Vec::new();
        }
        let mut raw = Vec::new();
        for stage in &st.gather_stage {
            raw.extend_from_slice(stage);
        }
        let mut payload = Vec::with_capacity(raw.len() + 5);
        if shared.msg.policy().enabled(shared.msg.size()) {
            let packed = compress(&raw);
            payload.push(1);
            payload.extend_from_slice(&(raw.len() as u32).to_le_bytes());
            payload.extend_from_slice(&packed);
        } else {
            payload.push(0);
            payload.extend_from_slice(&(raw.len() as u32).to_le_bytes());
            payload.extend_from_slice(&raw);
        }
        payload
    }

    fn decode_gather(&self, st: &mut FrameState, result: &crate::messaging::GatherResult) -> Result<()> {
        let shared = &self.shared;
        if shared.grid.config.color_format == ColorFormat::None {
            return Ok(());
        }
        let bpp = shared.grid.config.color_format.bytes_per_pixel();
        for rank in 0..shared.msg.size() {
            let block = result.block(rank);
            if block.is_empty() && shared.grid.owned_by(rank).next().is_none() {
                continue;
            }
            if block.len() < 5 {
                return Err(DfbError::Protocol(format!(
                    "gather block from rank {rank} truncated"
                )));
            }
            let compressed = block[0] & 1 != 0;
            let raw_len = u32::from_le_bytes(block[1..5].try_into().unwrap()) as usize;
            let raw = if compressed {
                decompress(&block[5..])?
            } else {
                block[5..].to_vec()
            };
            if raw.len() != raw_len {
                return Err(DfbError::Protocol(format!(
                    "gather block from rank {rank}: expected {raw_len} bytes, got {}",
                    raw.len()
                )));
            }
            let mut at = 0usize;
            let image = st
                .display_image
                .as_mut()
                .expect("display image allocated for non-NONE format");
            for desc in shared.grid.owned_by(rank) {
                let n = desc.region.area() * bpp;
                if at + n > raw.len() {
                    return Err(DfbError::Protocol(format!(
                        "gather block from rank {rank} too short for tile {}",
                        desc.tile_id
                    )));
                }
                image.write_region(desc.region, &raw[at..at + n]);
                at += n;
            }
            if at != raw.len() {
                return Err(DfbError::Protocol(format!(
                    "gather block from rank {rank} has {} trailing bytes",
                    raw.len() - at
                )));
            }
        }
        Ok(())
    }
}

impl Shared {
    fn set_error(&self, err: DfbError) {
        let mut st = self.state.lock().unwrap();
        if st.error.is_none() {
            st.error = Some(err);
        }
        drop(st);
        self.cv.notify_all();
    }

    /// Tile arriving from the messaging layer (or replayed from the early
    /// queue): dispatch to the worker pool if it belongs to the current
    /// frame, buffer it if it is early, reject it if it is late.
    fn route_incoming(&self, tile: Tile, src: RankId) {
        let mut st = self.state.lock().unwrap();
        if tile.frame_index > st.frame_index {
            st.pending_future.push((tile, src));
            return;
        }
        if tile.frame_index < st.frame_index || !st.frame_open {
            let err = DfbError::Protocol(format!(
                "tile {} for frame {} arrived during frame {} (open: {})",
                tile.tile_id, tile.frame_index, st.frame_index, st.frame_open
            ));
            drop(st);
            self.set_error(err);
            return;
        }
        st.in_flight += 1;
        drop(st);
        let _ = self.work_tx.send(Work::Input(tile, src));
    }

    /// Encoded final pixels arriving on the display rank (per-tile route).
    fn route_display_bytes(&self, payload: Vec<u8>) {
        if payload.len() < 8 {
            self.set_error(DfbError::Protocol("short display payload".into()));
            return;
        }
        let frame = u32::from_le_bytes(payload[0..4].try_into().unwrap());
        let tile_id = u32::from_le_bytes(payload[4..8].try_into().unwrap());
        let mut st = self.state.lock().unwrap();
        if frame > st.frame_index {
            st.pending_display.push((frame, tile_id, payload[8..].to_vec()));
            return;
        }
        if frame < st.frame_index || !st.frame_open {
            drop(st);
            self.set_error(DfbError::Protocol(format!(
                "display bytes for frame {frame} arrived late"
            )));
            return;
        }
        self.apply_display_bytes(&mut st, tile_id, &payload[8..]);
        drop(st);
        self.cv.notify_all();
    }

    fn apply_display_bytes(&self, st: &mut FrameState, tile_id: u32, bytes: &[u8]) {
        let desc = match self.grid.descriptor(tile_id) {
            Some(d) => *d,
            None => {
                st.error = Some(DfbError::Protocol(format!("display bytes for unknown tile {tile_id}")));
                return;
            }
        };
        if let Some(image) = st.display_image.as_mut() {
            image.write_region(desc.region, bytes);
        }
        st.display_received += 1;
    }

    /// Worker entry: run `process` for the tile's operation, serialized per
    /// image tile, and finalize on completion.
    fn process_input(&self, tile: Tile, src: RankId) {
        let mut st = self.state.lock().unwrap();
        let idx = match self.local_index.get(&tile.tile_id) {
            Some(&i) => i,
            None => {
                st.in_flight -= 1;
                st.error = Some(DfbError::Protocol(format!(
                    "rank {} received tile {} it does not own",
                    self.msg.rank(),
                    tile.tile_id
                )));
                drop(st);
                self.cv.notify_all();
                return;
            }
        };
        let mut next = Some((tile, src));
        while let Some((tile, src)) = next.take() {
            let slot = &mut st.slots[idx];
            let mut op = match slot.op.take() {
                Some(op) => op,
                None => {
                    // Another worker is inside process() for this tile; it
                    // will pick this input up from the backlog.
                    slot.backlog.push_back((tile, src));
                    return;
                }
            };
            st.stats.tiles_processed += 1;
            if st.timeline.first_input[idx].is_none() {
                st.timeline.first_input[idx] = Some(Instant::now());
            }
            drop(st);
            let outcome = op.process(tile, src);
            st = self.state.lock().unwrap();
            st.slots[idx].op = Some(op);
            match outcome {
                Err(e) => {
                    st.error = Some(DfbError::Protocol(format!(
                        "tile operation failed: {e}"
                    )));
                    self.cv.notify_all();
                }
                Ok(ProcessResult::Incomplete) => {}
                Ok(ProcessResult::Complete(finished)) => {
                    if let Err(e) = self.tile_completed(&mut st, idx, finished) {
                        st.error = Some(e);
                        self.cv.notify_all();
                    }
                }
            }
            st.in_flight -= 1;
            if st.in_flight == 0 {
                self.cv.notify_all();
            }
            next = st.slots[idx].backlog.pop_front();
        }
        drop(st);
    }

    /// Accumulate, run pixel ops, encode to the display format, stage for
    /// the gather (or post directly to the display), and retire the tile.
    fn tile_completed(&self, st: &mut FrameState, idx: usize, finished: Tile) -> Result<()> {
        if st.slots[idx].completed {
            return Err(DfbError::Usage(format!(
                "tile {} completed twice in frame {}",
                self.owned[idx], st.frame_index
            )));
        }
        st.slots[idx].completed = true;
        st.stats.tiles_finalized += 1;
        st.timeline.finalized[idx] = Some(Instant::now());

        let mut displayed = finished.color;
        if self.grid.config.accumulation_enabled {
            st.accum[idx].add_pass(&displayed);
            st.accum[idx].mean_into(&mut displayed);
        }
        for op in st.pixel_ops.clone() {
            op.process(finished.region, &mut displayed);
        }
        let encoded = encode_display_pixels(&displayed, self.grid.config.color_format);
        match self.options.final_route {
            FinalRoute::Gather => {
                st.gather_stage[idx] = encoded;
            }
            FinalRoute::PerTile => {
                if self.grid.config.color_format != ColorFormat::None {
                    let mut payload = Vec::with_capacity(8 + encoded.len());
                    payload.extend_from_slice(&st.frame_index.to_le_bytes());
                    payload.extend_from_slice(&self.owned[idx].to_le_bytes());
                    payload.extend_from_slice(&encoded);
                    self.msg
                        .post(self.options.display_rank, self.display_object, payload)?;
                }
            }
        }
        st.frames_pending -= 1;
        if st.frames_pending == 0 {
            self.cv.notify_all();
        }
        Ok(())
    }
}

impl Drop for DistributedFrameBuffer {
    fn drop(&mut self) {
        let mut workers = self.workers.lock().unwrap();
        for _ in workers.iter() {
            let _ = self.shared.work_tx.send(Work::Stop);
        }
        for w in workers.drain(..) {
            let _ = w.join();
        }
        self.shared.msg.unregister(self.shared.object);
        self.shared.msg.unregister(self.shared.display_object);
    }
}
