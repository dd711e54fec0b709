//! In-process transport: ranks are threads in one process, connected by
//! unbounded queues. Supports injected random delivery delays so tests can
//! shake out ordering assumptions.

use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, Sender};

use super::{check_dest, Envelope, RankId, Transport};
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default)]
pub struct InprocOptions {
    /// Sleep a random duration up to this bound before each remote delivery.
    pub max_delay: Option<Duration>,
    pub delay_seed: u64,
}

struct Shared {
    inboxes: Vec<Sender<Envelope>>,
}

pub struct InprocTransport {
    rank: RankId,
    size: u32,
    shared: Arc<Shared>,
    rx: Receiver<Envelope>,
    options: InprocOptions,
    delay_state: std::sync::Mutex<u64>,
}

/// Build a fully connected mesh of `n` in-process endpoints.
pub fn inproc_mesh(n: u32, options: InprocOptions) -> Vec<InprocTransport> {
    let mut inboxes = Vec::with_capacity(n as usize);
    let mut receivers = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let (tx, rx) = unbounded();
        inboxes.push(tx);
        receivers.push(rx);
    }
    let shared = Arc::new(Shared { inboxes });
    receivers
        .into_iter()
        .enumerate()
        .map(|(rank, rx)| InprocTransport {
            rank: rank as RankId,
            size: n,
            shared: shared.clone(),
            rx,
            options,
            delay_state: std::sync::Mutex::new(
                options.delay_seed ^ (0x9e37_79b9 * (rank as u64 + 1)),
            ),
        })
        .collect()
}

impl InprocTransport {
    fn random_delay(&self) {
        if let Some(max) = self.options.max_delay {
            let mut state = self.delay_state.lock().unwrap();
            // xorshift64*
            *state ^= *state << 13;
            *state ^= *state >> 7;
            *state ^= *state << 17;
            let nanos = (*state % max.as_nanos().max(1) as u64).max(1);
            drop(state);
            std::thread::sleep(Duration::from_nanos(nanos));
        }
    }
}

impl Transport for InprocTransport {
    fn rank(&self) -> RankId {
        self.rank
    }

    fn size(&self) -> u32 {
        self.size
    }

    fn send(&self, mut env: Envelope) -> Result<()> {
        check_dest(env.dest, self.size)?;
        env.src = self.rank;
        self.random_delay();
        // Receiver endpoints outliving us is not required; a dropped inbox
        // just discards the message during shutdown.
        let _ = self.shared.inboxes[env.dest as usize].send(env);
        Ok(())
    }

    fn loopback(&self, mut env: Envelope) -> Result<()> {
        env.src = self.rank;
        env.dest = self.rank;
        let _ = self.shared.inboxes[self.rank as usize].send(env);
        Ok(())
    }

    fn try_recv(&self) -> Option<Envelope> {
        self.rx.try_recv().ok()
    }

    fn recv_timeout(&self, timeout: Duration) -> Option<Envelope> {
        self.rx.recv_timeout(timeout).ok()
    }
}
