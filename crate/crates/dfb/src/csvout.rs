//! Per-(frame, rank) timing records and their CSV serialization.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{DfbError, Result};

pub const CSV_HEADER: &str =
    "frame,rank,local_render_s,composite_overhead_s,frame_total_s,bytes_sent,bytes_recv,msgs_sent";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingRecord {
    pub frame: u32,
    pub rank: u32,
    pub local_render_s: f64,
    pub composite_overhead_s: f64,
    pub frame_total_s: f64,
    pub bytes_sent: u64,
    pub bytes_recv: u64,
    pub msgs_sent: u64,
}

pub fn to_csv(records: &[TimingRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{},{},{}",
            r.frame,
            r.rank,
            r.local_render_s,
            r.composite_overhead_s,
            r.frame_total_s,
            r.bytes_sent,
            r.bytes_recv,
            r.msgs_sent
        );
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<TimingRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(DfbError::Protocol(format!(
                "unexpected CSV header: {other:?}"
            )))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(DfbError::Protocol(format!("CSV line {} malformed", i + 2)));
        }
        let parse_err = |what: &str| DfbError::Protocol(format!("CSV line {}: bad {what}", i + 2));
        out.push(TimingRecord {
            frame: f[0].parse().map_err(|_| parse_err("frame"))?,
            rank: f[1].parse().map_err(|_| parse_err("rank"))?,
            local_render_s: f[2].parse().map_err(|_| parse_err("local_render_s"))?,
            composite_overhead_s: f[3].parse().map_err(|_| parse_err("composite_overhead_s"))?,
            frame_total_s: f[4].parse().map_err(|_| parse_err("frame_total_s"))?,
            bytes_sent: f[5].parse().map_err(|_| parse_err("bytes_sent"))?,
            bytes_recv: f[6].parse().map_err(|_| parse_err("bytes_recv"))?,
            msgs_sent: f[7].parse().map_err(|_| parse_err("msgs_sent"))?,
        });
    }
    Ok(out)
}

pub fn write_csv(records: &[TimingRecord], path: &Path) -> Result<()> {
    std::fs::write(path, to_csv(records))?;
    Ok(())
}

/// Median and median absolute deviation.
pub fn median_mad(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let median = median_of(values);
    let deviations: Vec<f64> = values.iter().map(|v| (v - median).abs()).collect();
    (median, median_of(&deviations))
}

fn median_of(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
