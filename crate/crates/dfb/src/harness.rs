//! Multi-rank benchmark driver: spawns ranks (threads in-process, or child
//! processes over TCP), renders an orbit around the synthetic volume,
//! measures per-frame timing and compositing overhead, and emits images,
//! CSV records, and a run manifest.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use dfb_core::camera::orbit_camera;
use dfb_core::ops::{AlphaBlendOp, ImageParallelOp, TileOperation};
use dfb_core::tile::{ColorFormat, FrameConfig, Tile, TileDescriptor};

use crate::csvout::{median_mad, parse_csv, to_csv, write_csv, TimingRecord};
use crate::error::{DfbError, Result};
use crate::framebuffer::{DfbOptions, DistributedFrameBuffer, DisplayImage, FinalRoute};
use crate::messaging::{CompressionPolicy, Messenger, ObjectId, CODEC_NAME};
use crate::ppm::write_ppm;
use crate::render::{
    benchmark_scene, render_frame_data_parallel, render_frame_image_parallel, render_frame_mixed,
    PassParams, RenderContext, RendererKind, Submit,
};
use crate::scene::SceneConfig;
use crate::transport::inproc::{inproc_mesh, InprocOptions};
use crate::transport::manifest::RankManifest;
use crate::transport::tcp::TcpTransport;
use crate::transport::RankId;

pub const BENCH_OBJECT: ObjectId = ObjectId(0x0dfb);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    Inproc,
    Tcp,
}

impl std::str::FromStr for TransportKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "inproc" => Ok(TransportKind::Inproc),
            "tcp" => Ok(TransportKind::Tcp),
            other => Err(format!("unknown transport '{other}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub ranks: u32,
    pub transport: TransportKind,
    pub manifest_path: Option<PathBuf>,
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub renderer: RendererKind,
    pub replication: u32,
    pub frames: u32,
    pub format: ColorFormat,
    pub compression: CompressionPolicy,
    pub baseline: bool,
    /// (rank, milliseconds) artificial render delay per pass.
    pub delay: Option<(RankId, u64)>,
    pub spp: u32,
    pub accum: u32,
    pub out_prefix: Option<PathBuf>,
    pub seed: u64,
    pub scene: Option<SceneConfig>,
    pub volume_dims: [u32; 3],
    pub frame_deadline: Duration,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            ranks: 1,
            transport: TransportKind::Inproc,
            manifest_path: None,
            width: 512,
            height: 512,
            tile_size: 64,
            renderer: RendererKind::Data,
            replication: 1,
            frames: 1,
            format: ColorFormat::Rgba8,
            compression: CompressionPolicy::Auto,
            baseline: false,
            delay: None,
            spp: 1,
            accum: 1,
            out_prefix: None,
            seed: 0,
            scene: None,
            volume_dims: [128, 128, 128],
            frame_deadline: Duration::from_secs(30),
        }
    }
}

impl RunConfig {
    pub fn effective_scene(&self) -> SceneConfig {
        let mut scene = self.scene.clone().unwrap_or_else(|| {
            benchmark_scene(self.renderer, self.volume_dims, self.ranks, self.replication)
        });
        scene.spp = scene.spp.max(self.spp);
        scene
    }

    pub fn manifest_text(&self, scene: &SceneConfig) -> String {
        format!(
            "ranks {}\ntransport {}\nwidth {}\nheight {}\ntile_size {}\nrenderer {}\n\
             replication {}\nframes {}\nformat {}\ncompression {}\nbaseline {}\n\
             spp {}\naccum {}\nseed {}\ncodec {}\nvolume {} {} {}\nbricks {} {} {}\n",
            self.ranks,
            match self.transport {
                TransportKind::Inproc => "inproc",
                TransportKind::Tcp => "tcp",
            },
            self.width,
            self.height,
            self.tile_size,
            match self.renderer {
                RendererKind::Image => "image",
                RendererKind::Data => "data",
                RendererKind::Mixed => "mixed",
            },
            self.replication,
            self.frames,
            match self.format {
                ColorFormat::Rgba8 => "rgba8",
                ColorFormat::RgbaF32 => "rgbaf32",
                ColorFormat::None => "none",
            },
            match self.compression {
                CompressionPolicy::On => "on",
                CompressionPolicy::Off => "off",
                CompressionPolicy::Auto => "auto",
            },
            self.baseline,
            self.spp,
            self.accum,
            self.seed,
            CODEC_NAME,
            scene.volume_dims[0],
            scene.volume_dims[1],
            scene.volume_dims[2],
            scene.brick_grid[0],
            scene.brick_grid[1],
            scene.brick_grid[2],
        )
    }
}

/// Wall-clock instants shared across in-process ranks (one monotonic clock,
/// so the compositing-overhead metric is exact at desk scale).
#[derive(Debug, Default)]
struct TimingShare {
    /// [frame][rank] -> end of local rendering (last pass).
    render_end: Vec<Vec<Option<Instant>>>,
    /// [frame] -> display rank's frame completion.
    frame_end: Vec<Option<Instant>>,
}

struct RankOutput {
    records: Vec<TimingRecord>,
    images: Vec<Option<DisplayImage>>,
}

#[derive(Debug)]
pub struct BenchmarkOutput {
    pub records: Vec<TimingRecord>,
    /// Display-rank image per frame (None for format NONE or non-display).
    pub images: Vec<Option<DisplayImage>>,
    pub median_frame_s: f64,
    pub mad_frame_s: f64,
}

fn render_pass(
    kind: RendererKind,
    dfb: &DistributedFrameBuffer,
    ctx: &RenderContext,
    camera: &dfb_core::camera::Camera,
    pass: &PassParams,
    plan: &[u32],
    submit: &mut Submit,
) -> Result<()> {
    match kind {
        RendererKind::Image => render_frame_image_parallel(dfb, ctx, camera, pass, plan, submit),
        RendererKind::Data => render_frame_data_parallel(dfb, ctx, camera, pass, submit),
        RendererKind::Mixed => render_frame_mixed(dfb, ctx, camera, pass, submit),
    }
}

/// Run the whole benchmark loop for one rank. Returns per-frame records
/// (composite overhead still zero; the caller fills it in) and, on the
/// display rank, the final image of every frame.
fn run_rank(
    cfg: &RunConfig,
    msg: Arc<Messenger>,
    timing: Option<Arc<Mutex<TimingShare>>>,
) -> Result<RankOutput> {
    let rank = msg.rank();
    let scene = cfg.effective_scene();
    let frame_config = FrameConfig {
        width: cfg.width,
        height: cfg.height,
        tile_size: cfg.tile_size,
        color_format: cfg.format,
        accumulation_enabled: cfg.accum > 1,
    };
    let options = DfbOptions {
        workers: 2,
        frame_deadline: cfg.frame_deadline,
        final_route: FinalRoute::Gather,
        display_rank: 0,
    };
    let dfb = DistributedFrameBuffer::new(msg.clone(), frame_config, BENCH_OBJECT, options)?;
    let ctx = RenderContext::new(scene, rank, cfg.ranks)?;
    let plan = vec![1u32; dfb.grid().tile_count() as usize];
    let factory = |desc: &TileDescriptor| -> Box<dyn TileOperation> {
        match cfg.renderer {
            RendererKind::Image => Box::new(ImageParallelOp::new(plan_for(&plan, desc.tile_id))),
            _ => Box::new(AlphaBlendOp::new()),
        }
    };
    let aspect = cfg.width as f32 / cfg.height as f32;
    let is_display = rank == dfb.display_rank();
    let mut records = Vec::with_capacity(cfg.frames as usize);
    let mut images = Vec::with_capacity(cfg.frames as usize);
    let mut warned_none = false;

    for frame in 0..cfg.frames {
        let camera = orbit_camera(frame, cfg.frames.max(1), ctx.grid.volume_bounds(), 60.0, aspect);
        let counters_before = msg.counters();
        let mut local_render_s = 0.0f64;
        let mut frame_total_s = 0.0f64;
        let mut frame_image = None;

        for pass in 0..cfg.accum.max(1) {
            let pass_params = PassParams {
                accumulation_id: pass,
                seed: cfg.seed,
                jitter: cfg.accum > 1,
            };
            let t0 = Instant::now();
            dfb.begin_frame(&factory, Vec::new(), pass)?;

            let mut buffered: Vec<Tile> = Vec::new();
            if cfg.baseline {
                let mut submit = |t: Tile| -> Result<()> {
                    buffered.push(t);
                    Ok(())
                };
                render_pass(cfg.renderer, &dfb, &ctx, &camera, &pass_params, &plan, &mut submit)?;
            } else {
                let mut submit = |t: Tile| dfb.set_tile(t);
                render_pass(cfg.renderer, &dfb, &ctx, &camera, &pass_params, &plan, &mut submit)?;
            }
            if let Some((delayed, millis)) = cfg.delay {
                if delayed == rank {
                    std::thread::sleep(Duration::from_millis(millis));
                }
            }
            let render_end = Instant::now();
            local_render_s += (render_end - t0).as_secs_f64();
            if let Some(share) = &timing {
                let mut s = share.lock().unwrap();
                s.render_end[frame as usize][rank as usize] = Some(render_end);
            }

            if cfg.baseline {
                // Synchronous direct-send: nothing moves until every rank
                // finished rendering, mirroring a bulk-synchronous
                // compositor.
                msg.barrier()?;
                for tile in buffered {
                    dfb.set_tile(tile)?;
                }
            }
            frame_image = dfb.end_frame()?;
            let t1 = Instant::now();
            frame_total_s += (t1 - t0).as_secs_f64();
            if let Some(share) = &timing {
                if is_display {
                    let mut s = share.lock().unwrap();
                    s.frame_end[frame as usize] = Some(t1);
                }
            }
        }

        let delta = {
            let now = msg.counters();
            (
                now.bytes_sent - counters_before.bytes_sent,
                now.bytes_received - counters_before.bytes_received,
                now.msgs_sent - counters_before.msgs_sent,
            )
        };
        records.push(TimingRecord {
            frame,
            rank,
            local_render_s,
            composite_overhead_s: 0.0,
            frame_total_s,
            bytes_sent: delta.0,
            bytes_recv: delta.1,
            msgs_sent: delta.2,
        });

        if is_display {
            if let (Some(prefix), Some(image)) = (&cfg.out_prefix, &frame_image) {
                write_ppm(image, &frame_path(prefix, frame))?;
            }
            if cfg.out_prefix.is_some() && frame_image.is_none() && !warned_none {
                eprintln!("warning: display format NONE stores no pixels; skipping image output");
                warned_none = true;
            }
            images.push(frame_image);
        } else {
            images.push(None);
        }
    }

    // Quiesce before the messenger goes away.
    msg.barrier()?;
    Ok(RankOutput { records, images })
}

fn plan_for(plan: &[u32], tile_id: u32) -> u32 {
    plan.get(tile_id as usize).copied().unwrap_or(1).max(1)
}

pub fn frame_path(prefix: &Path, frame: u32) -> PathBuf {
    let mut name = prefix.file_name().unwrap_or_default().to_os_string();
    name.push(format!("_frame{frame:04}.ppm"));
    prefix.with_file_name(name)
}

pub fn csv_path(prefix: &Path) -> PathBuf {
    let mut name = prefix.file_name().unwrap_or_default().to_os_string();
    name.push("_timing.csv");
    prefix.with_file_name(name)
}

pub fn manifest_txt_path(prefix: &Path) -> PathBuf {
    let mut name = prefix.file_name().unwrap_or_default().to_os_string();
    name.push("_manifest.txt");
    prefix.with_file_name(name)
}

fn finalize_output(cfg: &RunConfig, mut records: Vec<TimingRecord>, images: Vec<Option<DisplayImage>>) -> Result<BenchmarkOutput> {
    records.sort_by_key(|r| (r.frame, r.rank));
    let display_totals: Vec<f64> = records
        .iter()
        .filter(|r| r.rank == 0)
        .map(|r| r.frame_total_s)
        .collect();
    let (median_frame_s, mad_frame_s) = median_mad(&display_totals);
    if let Some(prefix) = &cfg.out_prefix {
        write_csv(&records, &csv_path(prefix))?;
        std::fs::write(
            manifest_txt_path(prefix),
            cfg.manifest_text(&cfg.effective_scene()),
        )?;
    }
    Ok(BenchmarkOutput {
        records,
        images,
        median_frame_s,
        mad_frame_s,
    })
}

/// Run the benchmark with in-process ranks (one thread per rank).
pub fn run_inproc(cfg: &RunConfig) -> Result<BenchmarkOutput> {
    if cfg.transport != TransportKind::Inproc {
        return Err(DfbError::Usage("run_inproc requires the inproc transport".into()));
    }
    let share = Arc::new(Mutex::new(TimingShare {
        render_end: vec![vec![None; cfg.ranks as usize]; cfg.frames as usize],
        frame_end: vec![None; cfg.frames as usize],
    }));
    let mesh = inproc_mesh(cfg.ranks, InprocOptions::default());
    let mut handles = Vec::new();
    for transport in mesh {
        let cfg = cfg.clone();
        let share = share.clone();
        handles.push(std::thread::spawn(move || -> Result<RankOutput> {
            let msg = Messenger::with_options(
                Arc::new(transport),
                cfg.compression,
                cfg.frame_deadline,
                false,
            );
            let out = run_rank(&cfg, msg.clone(), Some(share));
            msg.shutdown();
            out
        }));
    }
    let mut outputs = Vec::new();
    let mut errors = Vec::new();
    for (rank, h) in handles.into_iter().enumerate() {
        match h.join() {
            Ok(Ok(out)) => outputs.push(out),
            Ok(Err(e)) => errors.push(format!("rank {rank}: {e}")),
            Err(_) => errors.push(format!("rank {rank}: thread panicked")),
        }
    }
    if !errors.is_empty() {
        return Err(DfbError::Transport(errors.join(" | ")));
    }

    // Exact overhead: shared clock across ranks.
    let share = share.lock().unwrap();
    let mut records = Vec::new();
    let mut images = vec![None; cfg.frames as usize];
    for (rank, out) in outputs.into_iter().enumerate() {
        for mut r in out.records {
            let f = r.frame as usize;
            let slowest = share.render_end[f].iter().flatten().max();
            let end = share.frame_end[f];
            r.composite_overhead_s = match (slowest, end) {
                (Some(&s), Some(e)) if e > s => (e - s).as_secs_f64(),
                _ => 0.0,
            };
            records.push(r);
        }
        if rank == 0 {
            images = out.images;
        }
    }
    drop(share);
    finalize_output(cfg, records, images)
}

/// Run one rank of a TCP job (a child process). Rank 0 gathers every rank's
/// records, computes the (approximate, per-rank-clock) overhead column, and
/// produces the run outputs.
pub fn run_tcp_rank(cfg: &RunConfig, rank: RankId) -> Result<Option<BenchmarkOutput>> {
    let manifest_path = cfg
        .manifest_path
        .as_ref()
        .ok_or_else(|| DfbError::Usage("tcp transport requires a rank manifest".into()))?;
    let manifest = RankManifest::load(manifest_path)?;
    if manifest.len() != cfg.ranks {
        return Err(DfbError::Config(format!(
            "manifest lists {} ranks, config wants {}",
            manifest.len(),
            cfg.ranks
        )));
    }
    let transport = TcpTransport::connect(rank, &manifest, Duration::from_secs(20))?;
    let msg = Messenger::with_options(
        Arc::new(transport),
        cfg.compression,
        cfg.frame_deadline,
        false,
    );
    let out = run_rank(cfg, msg.clone(), None)?;

    // Ship records to rank 0 as CSV text.
    let gathered = msg.gather(0, to_csv(&out.records).as_bytes())?;
    let result = match gathered {
        None => None,
        Some(g) => {
            let mut records = Vec::new();
            for r in 0..cfg.ranks {
                let text = String::from_utf8_lossy(g.block(r));
                records.extend(parse_csv(&text)?);
            }
            // Approximate overhead from per-rank clocks: the display frame
            // total minus the slowest rank's render duration.
            for f in 0..cfg.frames {
                let slowest = records
                    .iter()
                    .filter(|r| r.frame == f)
                    .map(|r| r.local_render_s)
                    .fold(0.0f64, f64::max);
                let total = records
                    .iter()
                    .find(|r| r.frame == f && r.rank == 0)
                    .map(|r| r.frame_total_s)
                    .unwrap_or(0.0);
                let overhead = (total - slowest).max(0.0);
                for r in records.iter_mut().filter(|r| r.frame == f) {
                    r.composite_overhead_s = overhead;
                }
            }
            Some(finalize_output(cfg, records, out.images)?)
        }
    };
    msg.barrier()?;
    msg.shutdown();
    Ok(result)
}

/// Parent-side TCP orchestration: pick ports, write a manifest, spawn one
/// child process per rank, and wait for them.
pub fn run_tcp_parent(cfg: &RunConfig, exe: &Path, extra_args: &[String]) -> Result<()> {
    let manifest_path = match &cfg.manifest_path {
        Some(p) => p.clone(),
        None => {
            let manifest = local_manifest(cfg.ranks)?;
            let dir = std::env::temp_dir();
            let path = dir.join(format!("dfb_manifest_{}.txt", std::process::id()));
            std::fs::write(&path, manifest.to_text())?;
            path
        }
    };
    let mut children = Vec::new();
    for rank in 0..cfg.ranks {
        let mut cmd = std::process::Command::new(exe);
        cmd.args(extra_args)
            .arg("--rank")
            .arg(rank.to_string())
            .arg("--manifest")
            .arg(&manifest_path);
        children.push(cmd.spawn()?);
    }
    let mut failed = Vec::new();
    for (rank, mut child) in children.into_iter().enumerate() {
        let status = child.wait()?;
        if !status.success() {
            failed.push(rank);
        }
    }
    if !failed.is_empty() {
        return Err(DfbError::Transport(format!("ranks {failed:?} exited with errors")));
    }
    Ok(())
}

/// A localhost manifest with freshly discovered free ports.
pub fn local_manifest(ranks: u32) -> Result<RankManifest> {
    let holders: Vec<std::net::TcpListener> = (0..ranks)
        .map(|_| std::net::TcpListener::bind("127.0.0.1:0"))
        .collect::<std::io::Result<_>>()?;
    let addrs = holders
        .iter()
        .map(|l| l.local_addr())
        .collect::<std::io::Result<Vec<_>>>()?;
    drop(holders);
    Ok(RankManifest::new(addrs))
}
