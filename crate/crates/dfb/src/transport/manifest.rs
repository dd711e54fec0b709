//! Rank manifest for the TCP backend: one `rank host:port` line per rank.

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::Path;

use crate::error::{DfbError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankManifest {
    addrs: Vec<SocketAddr>,
}

impl RankManifest {
    pub fn new(addrs: Vec<SocketAddr>) -> Self {
        RankManifest { addrs }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(u32, SocketAddr)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let rank: u32 = parts
                .next()
                .and_then(|r| r.parse().ok())
                .ok_or_else(|| DfbError::Config(format!("manifest line {}: bad rank", lineno + 1)))?;
            let addr: SocketAddr = parts
                .next()
                .and_then(|a| a.parse().ok())
                .ok_or_else(|| DfbError::Config(format!("manifest line {}: bad address", lineno + 1)))?;
            entries.push((rank, addr));
        }
        entries.sort_by_key(|(r, _)| *r);
        for (i, (r, _)) in entries.iter().enumerate() {
            if *r != i as u32 {
                return Err(DfbError::Config(format!(
                    "manifest must list ranks 0..n contiguously, found rank {r} at position {i}"
                )));
            }
        }
        if entries.is_empty() {
            return Err(DfbError::Config("manifest is empty".into()));
        }
        Ok(RankManifest {
            addrs: entries.into_iter().map(|(_, a)| a).collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (rank, addr) in self.addrs.iter().enumerate() {
            let _ = writeln!(out, "{rank} {addr}");
        }
        out
    }

    pub fn len(&self) -> u32 {
        self.addrs.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.addrs.is_empty()
    }

    pub fn addr(&self, rank: u32) -> SocketAddr {
        self.addrs[rank as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_roundtrip() {
        let text = "# comment\n0 127.0.0.1:9000\n1 127.0.0.1:9001\n";
        let m = RankManifest::parse(text).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.addr(1).port(), 9001);
        let again = RankManifest::parse(&m.to_text()).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn rejects_gaps() {
        assert!(RankManifest::parse("0 127.0.0.1:9000\n2 127.0.0.1:9002\n").is_err());
    }
}
