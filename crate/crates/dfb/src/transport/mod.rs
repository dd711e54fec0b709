//! Rank-to-rank transports. Both backends guarantee point-to-point ordering
//! per (sender, receiver) pair and lossless delivery; received envelopes are
//! funneled into one queue per rank that the messaging layer drains.

use std::time::Duration;

use crate::error::{DfbError, Result};

pub mod inproc;
pub mod manifest;
pub mod tcp;

pub type RankId = u32;

/// Envelope flag bit 0: payload is compressed.
pub const FLAG_COMPRESSED: u32 = 1;

/// Wire frame magic for the TCP backend.
pub const WIRE_MAGIC: [u8; 4] = *b"DFB1";

/// An addressed message: destination rank plus the distributed object that
/// should consume the payload. The source rank is stamped by the transport.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub src: RankId,
    pub dest: RankId,
    pub object: u64,
    pub flags: u32,
    pub payload: Vec<u8>,
}

impl Envelope {
    /// Bytes on the wire for this envelope (header + payload).
    pub fn wire_len(&self) -> u64 {
        (WIRE_MAGIC.len() + 8 + 4 + 4 + self.payload.len()) as u64
    }

    /// TCP wire frame: magic "DFB1" | destObject u64 LE | flags u32 LE |
    /// payloadLen u32 LE | payload.
    pub fn encode_frame(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload.len() + 20);
        out.extend_from_slice(&WIRE_MAGIC);
        out.extend_from_slice(&self.object.to_le_bytes());
        out.extend_from_slice(&self.flags.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

pub trait Transport: Send + Sync {
    fn rank(&self) -> RankId;
    fn size(&self) -> u32;

    /// Queue an envelope for delivery to `env.dest`. Does not wait for the
    /// receiver.
    fn send(&self, env: Envelope) -> Result<()>;

    /// Short-circuit delivery into this rank's own receive queue without
    /// touching the network path.
    fn loopback(&self, env: Envelope) -> Result<()>;

    /// Non-blocking poll for a received envelope.
    fn try_recv(&self) -> Option<Envelope>;

    /// Blocking poll with a timeout.
    fn recv_timeout(&self, timeout: Duration) -> Option<Envelope>;
}

pub(crate) fn check_dest(dest: RankId, size: u32) -> Result<()> {
    if dest >= size {
        return Err(DfbError::Usage(format!(
            "destination rank {dest} out of range (size {size})"
        )));
    }
    Ok(())
}
