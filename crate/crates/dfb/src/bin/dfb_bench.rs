//! Multi-rank rendering benchmark. In-process ranks by default; with
//! `--transport tcp` the process re-spawns itself once per rank and the
//! ranks talk over a full mesh of local sockets.

use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;

use dfb::csvout::median_mad;
use dfb::error::{DfbError, Result};
use dfb::harness::{run_inproc, run_tcp_parent, run_tcp_rank, RunConfig, TransportKind};
use dfb::messaging::CompressionPolicy;
use dfb::render::RendererKind;
use dfb::scene::SceneConfig;
use dfb_core::tile::ColorFormat;

#[derive(Parser, Debug)]
#[command(name = "dfb-bench", about = "Distributed framebuffer rendering benchmark")]
struct Args {
    /// Number of ranks.
    #[arg(long, default_value_t = 1)]
    ranks: u32,
    /// Transport backend.
    #[arg(long, default_value = "inproc")]
    transport: String,
    /// Rank manifest file for the TCP backend (rank host:port lines).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    width: u32,
    #[arg(long, default_value_t = 512)]
    height: u32,
    #[arg(long = "tile-size", default_value_t = 64)]
    tile_size: u32,
    /// Rendering algorithm: image | data | mixed.
    #[arg(long, default_value = "data")]
    renderer: String,
    /// Brick replication factor (mixed renderer).
    #[arg(long, default_value_t = 1)]
    replication: u32,
    /// Orbit frames to render.
    #[arg(long, default_value_t = 1)]
    frames: u32,
    /// Display format: rgba8 | rgbaf32 | none.
    #[arg(long, default_value = "rgba8")]
    format: String,
    /// Message compression: on | off | auto (auto = on at 16+ ranks).
    #[arg(long, default_value = "auto")]
    compression: String,
    /// Use the synchronous direct-send baseline compositor.
    #[arg(long, default_value_t = false)]
    baseline: bool,
    /// Artificial render delay, RANK:MILLIS.
    #[arg(long = "delay-rank")]
    delay_rank: Option<String>,
    /// Camera samples per pixel.
    #[arg(long, default_value_t = 1)]
    spp: u32,
    /// Progressive accumulation passes per frame.
    #[arg(long, default_value_t = 1)]
    accum: u32,
    /// Output prefix (PREFIX_frame%04d.ppm, PREFIX_timing.csv,
    /// PREFIX_manifest.txt).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scene description file (defaults to the synthetic benchmark volume).
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Synthetic volume dimensions when no scene file is given.
    #[arg(long, num_args = 3, default_values_t = [128u32, 128, 128])]
    dims: Vec<u32>,
    /// Frame deadline in seconds before a starvation report.
    #[arg(long, default_value_t = 30)]
    deadline: u64,
    /// Internal: run as a single rank of a TCP job.
    #[arg(long, hide = true)]
    rank: Option<u32>,
}

fn parse_delay(s: &str) -> Result<(u32, u64)> {
    let (rank, ms) = s
        .split_once(':')
        .ok_or_else(|| DfbError::Usage("expected --delay-rank RANK:MILLIS".into()))?;
    Ok((
        rank.parse()
            .map_err(|_| DfbError::Usage(format!("bad delay rank '{rank}'")))?,
        ms.parse()
            .map_err(|_| DfbError::Usage(format!("bad delay millis '{ms}'")))?,
    ))
}

fn build_config(args: &Args) -> Result<RunConfig> {
    let scene = match &args.scene {
        Some(path) => Some(SceneConfig::load(path)?),
        None => None,
    };
    Ok(RunConfig {
        ranks: args.ranks,
        transport: args
            .transport
            .parse::<TransportKind>()
            .map_err(DfbError::Usage)?,
        manifest_path: args.manifest.clone(),
        width: args.width,
        height: args.height,
        tile_size: args.tile_size,
        renderer: args.renderer.parse::<RendererKind>().map_err(DfbError::Usage)?,
        replication: args.replication,
        frames: args.frames,
        format: match args.format.as_str() {
            "rgba8" => ColorFormat::Rgba8,
            "rgbaf32" => ColorFormat::RgbaF32,
            "none" => ColorFormat::None,
            other => return Err(DfbError::Usage(format!("unknown format '{other}'"))),
        },
        compression: args
            .compression
            .parse::<CompressionPolicy>()
            .map_err(DfbError::Usage)?,
        baseline: args.baseline,
        delay: args.delay_rank.as_deref().map(parse_delay).transpose()?,
        spp: args.spp,
        accum: args.accum,
        out_prefix: args.out.clone(),
        seed: args.seed,
        scene,
        volume_dims: [args.dims[0], args.dims[1], args.dims[2]],
        frame_deadline: Duration::from_secs(args.deadline),
    })
}

/// Rebuild the argument list for spawned TCP rank processes.
fn child_args(args: &Args) -> Vec<String> {
    let mut out = vec![
        "--ranks".into(),
        args.ranks.to_string(),
        "--transport".into(),
        "tcp".into(),
        "--width".into(),
        args.width.to_string(),
        "--height".into(),
        args.height.to_string(),
        "--tile-size".into(),
        args.tile_size.to_string(),
        "--renderer".into(),
        args.renderer.clone(),
        "--replication".into(),
        args.replication.to_string(),
        "--frames".into(),
        args.frames.to_string(),
        "--format".into(),
        args.format.clone(),
        "--compression".into(),
        args.compression.clone(),
        "--spp".into(),
        args.spp.to_string(),
        "--accum".into(),
        args.accum.to_string(),
        "--seed".into(),
        args.seed.to_string(),
        "--deadline".into(),
        args.deadline.to_string(),
        "--dims".into(),
        args.dims[0].to_string(),
        args.dims[1].to_string(),
        args.dims[2].to_string(),
    ];
    if args.baseline {
        out.push("--baseline".into());
    }
    if let Some(d) = &args.delay_rank {
        out.push("--delay-rank".into());
        out.push(d.clone());
    }
    if let Some(o) = &args.out {
        out.push("--out".into());
        out.push(o.display().to_string());
    }
    if let Some(s) = &args.scene {
        out.push("--scene".into());
        out.push(s.display().to_string());
    }
    out
}

fn main() {
    let args = Args::parse();
    if let Err(e) = run(&args) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(args: &Args) -> Result<()> {
    if args.dims.len() != 3 {
        return Err(DfbError::Usage("--dims takes three values".into()));
    }
    let cfg = build_config(args)?;
    match (cfg.transport, args.rank) {
        (TransportKind::Inproc, None) => {
            let out = run_inproc(&cfg)?;
            report(&out.records, out.median_frame_s, out.mad_frame_s);
            Ok(())
        }
        (TransportKind::Inproc, Some(_)) => {
            Err(DfbError::Usage("--rank only applies to the tcp transport".into()))
        }
        (TransportKind::Tcp, Some(rank)) => {
            if let Some(out) = run_tcp_rank(&cfg, rank)? {
                report(&out.records, out.median_frame_s, out.mad_frame_s);
            }
            Ok(())
        }
        (TransportKind::Tcp, None) => {
            let exe = std::env::current_exe()?;
            run_tcp_parent(&cfg, &exe, &child_args(args))
        }
    }
}

fn report(records: &[dfb::csvout::TimingRecord], median: f64, mad: f64) {
    let overheads: Vec<f64> = records
        .iter()
        .filter(|r| r.rank == 0)
        .map(|r| r.composite_overhead_s)
        .collect();
    let (median_overhead, _) = median_mad(&overheads);
    println!(
        "frames {}   median frame {:.4}s (mad {:.4}s)   median composite overhead {:.4}s",
        overheads.len(),
        median,
        mad,
        median_overhead
    );
}
