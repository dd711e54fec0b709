//! Benchmark-harness behavior: reproducibility, output files, the baseline
//! compositor, and timing-record sanity.

use dfb::csvout::parse_csv;
use dfb::harness::{csv_path, frame_path, manifest_txt_path, run_inproc, RunConfig, TransportKind};
use dfb::messaging::CompressionPolicy;
use dfb::render::RendererKind;
use dfb_core::tile::ColorFormat;

fn small_config() -> RunConfig {
    RunConfig {
        ranks: 2,
        transport: TransportKind::Inproc,
        renderer: RendererKind::Data,
        width: 128,
        height: 128,
        tile_size: 64,
        frames: 2,
        format: ColorFormat::Rgba8,
        compression: CompressionPolicy::Off,
        volume_dims: [32, 32, 32],
        seed: 11,
        ..RunConfig::default()
    }
}

fn images_of(out: &dfb::harness::BenchmarkOutput) -> Vec<Vec<u8>> {
    out.images
        .iter()
        .map(|i| i.as_ref().expect("display image").to_rgba8().2)
        .collect()
}

#[test]
fn identical_seeded_runs_are_bitwise_identical() {
    let cfg = small_config();
    let a = run_inproc(&cfg).unwrap();
    let b = run_inproc(&cfg).unwrap();
    assert_eq!(images_of(&a), images_of(&b));
}

#[test]
fn single_rank_single_frame_produces_one_image_and_row() {
    let mut cfg = small_config();
    cfg.ranks = 1;
    cfg.frames = 1;
    let out = run_inproc(&cfg).unwrap();
    assert_eq!(out.images.len(), 1);
    assert!(out.images[0].is_some());
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.records[0].frame, 0);
    assert_eq!(out.records[0].rank, 0);
}

#[test]
fn output_files_are_written_and_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("run");
    let mut cfg = small_config();
    cfg.out_prefix = Some(prefix.clone());
    let out = run_inproc(&cfg).unwrap();

    for frame in 0..cfg.frames {
        let p = frame_path(&prefix, frame);
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P6\n128 128\n255\n"), "{p:?}");
        let header = b"P6\n128 128\n255\n".len();
        assert_eq!(bytes.len(), header + 128 * 128 * 3);
    }
    let parsed = parse_csv(&std::fs::read_to_string(csv_path(&prefix)).unwrap()).unwrap();
    assert_eq!(parsed.len(), out.records.len());
    // Floats are written with 6 decimals; compare at that precision.
    let round6 = |v: f64| (v * 1e6).round() / 1e6;
    for (p, r) in parsed.iter().zip(&out.records) {
        assert_eq!((p.frame, p.rank), (r.frame, r.rank));
        assert_eq!(p.local_render_s, round6(r.local_render_s));
        assert_eq!(p.composite_overhead_s, round6(r.composite_overhead_s));
        assert_eq!(p.frame_total_s, round6(r.frame_total_s));
        assert_eq!(
            (p.bytes_sent, p.bytes_recv, p.msgs_sent),
            (r.bytes_sent, r.bytes_recv, r.msgs_sent)
        );
    }

    let manifest = std::fs::read_to_string(manifest_txt_path(&prefix)).unwrap();
    assert!(manifest.contains("codec deflate"), "{manifest}");
    assert!(manifest.contains("seed 11"), "{manifest}");
}

#[test]
fn baseline_produces_the_same_image() {
    let cfg = small_config();
    let normal = run_inproc(&cfg).unwrap();
    let mut baseline_cfg = cfg.clone();
    baseline_cfg.baseline = true;
    let baseline = run_inproc(&baseline_cfg).unwrap();
    assert_eq!(images_of(&normal), images_of(&baseline));
}

#[test]
fn timing_records_are_sane() {
    let mut cfg = small_config();
    cfg.delay = Some((1, 30));
    let out = run_inproc(&cfg).unwrap();
    assert_eq!(out.records.len(), (cfg.frames * cfg.ranks) as usize);
    for r in &out.records {
        assert!(r.frame_total_s >= r.local_render_s, "{r:?}");
        assert!(r.composite_overhead_s >= 0.0, "{r:?}");
        if r.rank == 1 {
            assert!(r.local_render_s >= 0.030, "delay not applied: {r:?}");
        }
    }
    assert!(out.median_frame_s > 0.0);
}

#[test]
fn none_format_runs_without_images() {
    let mut cfg = small_config();
    cfg.format = ColorFormat::None;
    let out = run_inproc(&cfg).unwrap();
    assert!(out.images.iter().all(|i| i.is_none()));
}

#[test]
fn accumulation_runs_all_passes() {
    let mut cfg = small_config();
    cfg.frames = 1;
    cfg.accum = 4;
    let a = run_inproc(&cfg).unwrap();
    let b = run_inproc(&cfg).unwrap();
    assert_eq!(images_of(&a), images_of(&b), "accumulated runs reproduce");
}
