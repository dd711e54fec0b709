//! Asynchronous point-to-point messaging with global object addressing.
//!
//! Distributed objects register under a globally unique id; a message posted
//! to (rank, object) is delivered to that object's handler on the receiving
//! rank. Two threads per rank drive the layer, mirroring the usual MPI
//! split: one drains the outbox into the transport, one drains received
//! envelopes and invokes handlers. Handlers therefore run on the inbox
//! thread only and must never block on the transport thread.
//!
//! A gather-to-root collective and a barrier are built on the same
//! connections: control envelopes use reserved object ids, so they stay FIFO
//! with every tile message that preceded them on a channel.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Sender};
use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;

use crate::error::{DfbError, Result};
use crate::transport::{Envelope, RankId, Transport, FLAG_COMPRESSED};

/// Globally unique identifier of a distributed object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectId(pub u64);

/// Reserved ids for layer-internal control traffic.
const CONTROL_GATHER: u64 = u64::MAX;
const CONTROL_RELEASE: u64 = u64::MAX - 1;

/// Ids at or above this value cannot be registered by applications.
pub const RESERVED_OBJECT_BASE: u64 = u64::MAX - 15;

/// Name of the payload codec, recorded in run manifests.
pub const CODEC_NAME: &str = "deflate";

pub fn compress(payload: &[u8]) -> Vec<u8> {
    let mut enc = ZlibEncoder::new(Vec::new(), Compression::fast());
    enc.write_all(payload).expect("vec write cannot fail");
    enc.finish().expect("vec write cannot fail")
}

pub fn decompress(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    ZlibDecoder::new(bytes)
        .read_to_end(&mut out)
        .map_err(|e| DfbError::Integrity(format!("payload does not decompress: {e}")))?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompressionPolicy {
    On,
    Off,
    /// On from 16 ranks up.
    Auto,
}

impl CompressionPolicy {
    pub fn enabled(self, num_ranks: u32) -> bool {
        match self {
            CompressionPolicy::On => true,
            CompressionPolicy::Off => false,
            CompressionPolicy::Auto => num_ranks >= 16,
        }
    }
}

impl std::str::FromStr for CompressionPolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "on" => Ok(CompressionPolicy::On),
            "off" => Ok(CompressionPolicy::Off),
            "auto" => Ok(CompressionPolicy::Auto),
            other => Err(format!("unknown compression policy '{other}'")),
        }
    }
}

/// Concatenated per-rank bytes at the gather root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatherResult {
    pub data: Vec<u8>,
    /// Start offset of each rank's block in `data`.
    pub offsets: Vec<usize>,
}

impl GatherResult {
    pub fn block(&self, rank: RankId) -> &[u8] {
        let start = self.offsets[rank as usize];
        let end = self
            .offsets
            .get(rank as usize + 1)
            .copied()
            .unwrap_or(self.data.len());
        &self.data[start..end]
    }
}

pub type Handler = Box<dyn FnMut(RankId, Vec<u8>) + Send>;

#[derive(Debug, Default)]
pub struct Counters {
    pub msgs_sent: AtomicU64,
    pub bytes_sent: AtomicU64,
    pub bytes_received: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CounterSnapshot {
    pub msgs_sent: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

#[derive(Default)]
struct GatherState {
    /// round -> per-rank contribution.
    rounds: HashMap<u64, Vec<Option<Vec<u8>>>>,
}

#[derive(Default)]
struct BarrierState {
    released_round: u64,
}

struct Inner {
    transport: Arc<dyn Transport>,
    registry: Mutex<HashMap<u64, Handler>>,
    gather: Mutex<GatherState>,
    gather_cv: Condvar,
    barrier: Mutex<BarrierState>,
    barrier_cv: Condvar,
    counters: Counters,
    unknown_receiver: AtomicU64,
    strict: bool,
    fatal: Mutex<Option<String>>,
    running: AtomicBool,
}

enum Outgoing {
    Env(Envelope),
    Shutdown,
}

/// The per-rank messaging endpoint.
pub struct Messenger {
    inner: Arc<Inner>,
    outbox: Sender<Outgoing>,
    rank: RankId,
    size: u32,
    policy: CompressionPolicy,
    sync_deadline: Duration,
    gather_round: AtomicU64,
    barrier_round: AtomicU64,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl Messenger {
    pub fn new(transport: Arc<dyn Transport>, policy: CompressionPolicy) -> Arc<Self> {
        Self::with_options(transport, policy, Duration::from_secs(30), false)
    }

    pub fn with_options(
        transport: Arc<dyn Transport>,
        policy: CompressionPolicy,
        sync_deadline: Duration,
        strict: bool,
    ) -> Arc<Self> {
        let rank = transport.rank();
        let size = transport.size();
        let inner = Arc::new(Inner {
            transport,
            registry: Mutex::new(HashMap::new()),
            gather: Mutex::new(GatherState::default()),
            gather_cv: Condvar::new(),
            barrier: Mutex::new(BarrierState::default()),
            barrier_cv: Condvar::new(),
            counters: Counters::default(),
            unknown_receiver: AtomicU64::new(0),
            strict,
            fatal: Mutex::new(None),
            running: AtomicBool::new(true),
        });
        let (outbox, outbox_rx) = unbounded::<Outgoing>();

        // Transport thread: drain the outbox into the transport.
        let send_inner = inner.clone();
        let transport_thread = std::thread::Builder::new()
            .name(format!("dfb-net-{rank}"))
            .spawn(move || {
                while let Ok(out) = outbox_rx.recv() {
                    match out {
                        Outgoing::Env(env) => {
                            if let Err(e) = send_inner.transport.send(env) {
                                send_inner.set_fatal(format!("transport send failed: {e}"));
                            }
                        }
                        Outgoing::Shutdown => return,
                    }
                }
            })
            .expect("spawn transport thread");

        // Inbox thread: deliver received envelopes to registered objects.
        let recv_inner = inner.clone();
        let inbox_thread = std::thread::Builder::new()
            .name(format!("dfb-inbox-{rank}"))
            .spawn(move || {
                while recv_inner.running.load(Ordering::Acquire) {
                    let env = match recv_inner.transport.recv_timeout(Duration::from_millis(25)) {
                        Some(env) => env,
                        None => continue,
                    };
                    recv_inner.deliver(env);
                }
            })
            .expect("spawn inbox thread");

        Arc::new(Messenger {
            inner,
            outbox,
            rank,
            size,
            policy,
            sync_deadline,
            gather_round: AtomicU64::new(0),
            barrier_round: AtomicU64::new(1),
            threads: Mutex::new(vec![transport_thread, inbox_thread]),
        })
    }

    pub fn rank(&self) -> RankId {
        self.rank
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn policy(&self) -> CompressionPolicy {
        self.policy
    }

    pub fn counters(&self) -> CounterSnapshot {
        CounterSnapshot {
            msgs_sent: self.inner.counters.msgs_sent.load(Ordering::Relaxed),
            bytes_sent: self.inner.counters.bytes_sent.load(Ordering::Relaxed),
            bytes_received: self.inner.counters.bytes_received.load(Ordering::Relaxed),
        }
    }

    pub fn unknown_receiver_count(&self) -> u64 {
        self.inner.unknown_receiver.load(Ordering::Relaxed)
    }

    /// Register a handler for a distributed object. At most once per rank.
    pub fn register(
        &self,
        object: ObjectId,
        handler: impl FnMut(RankId, Vec<u8>) + Send + 'static,
    ) -> Result<()> {
        if object.0 >= RESERVED_OBJECT_BASE {
            return Err(DfbError::Usage(format!("object id {} is reserved", object.0)));
        }
        let mut reg = self.inner.registry.lock().unwrap();
        if reg.contains_key(&object.0) {
            return Err(DfbError::Usage(format!(
                "object {} already registered on rank {}",
                object.0, self.rank
            )));
        }
        reg.insert(object.0, Box::new(handler));
        Ok(())
    }

    pub fn unregister(&self, object: ObjectId) {
        self.inner.registry.lock().unwrap().remove(&object.0);
    }

    /// Post a payload to `object` on `dest`. Returns without waiting for
    /// delivery. Self-posts bypass the network path entirely.
    pub fn post(&self, dest: RankId, object: ObjectId, payload: Vec<u8>) -> Result<()> {
        if dest >= self.size {
            return Err(DfbError::Usage(format!(
                "destination rank {dest} out of range (size {})",
                self.size
            )));
        }
        self.check_fatal()?;
        let mut env = Envelope {
            src: self.rank,
            dest,
            object: object.0,
            flags: 0,
            payload,
        };
        if dest == self.rank {
            self.count_send(&env);
            return self.inner.transport.loopback(env);
        }
        if self.policy.enabled(self.size) {
            env.payload = compress(&env.payload);
            env.flags |= FLAG_COMPRESSED;
        }
        self.count_send(&env);
        let _ = self.outbox.send(Outgoing::Env(env));
        Ok(())
    }

    fn count_send(&self, env: &Envelope) {
        self.inner.counters.msgs_sent.fetch_add(1, Ordering::Relaxed);
        self.inner
            .counters
            .bytes_sent
            .fetch_add(env.wire_len(), Ordering::Relaxed);
    }

    fn check_fatal(&self) -> Result<()> {
        if let Some(msg) = self.inner.fatal.lock().unwrap().clone() {
            return Err(DfbError::Transport(msg));
        }
        Ok(())
    }

    /// Gather `local` from every rank to `root`, ordered by rank id. The
    /// root blocks until all contributions arrived (or the sync deadline
    /// passes); other ranks return immediately after sending.
    pub fn gather(&self, root: RankId, local: &[u8]) -> Result<Option<GatherResult>> {
        self.check_fatal()?;
        let round = self.gather_round.fetch_add(1, Ordering::SeqCst);
        if self.rank != root {
            let mut payload = Vec::with_capacity(8 + local.len());
            payload.extend_from_slice(&round.to_le_bytes());
            payload.extend_from_slice(local);
            let env = Envelope {
                src: self.rank,
                dest: root,
                object: CONTROL_GATHER,
                flags: 0,
                payload,
            };
            self.count_send(&env);
            let _ = self.outbox.send(Outgoing::Env(env));
            return Ok(None);
        }

        // Root: deposit our own block, wait for the rest.
        {
            let mut st = self.inner.gather.lock().unwrap();
            let parts = st
                .rounds
                .entry(round)
                .or_insert_with(|| vec![None; self.size as usize]);
            parts[self.rank as usize] = Some(local.to_vec());
        }
        let deadline = Instant::now() + self.sync_deadline;
        let mut st = self.inner.gather.lock().unwrap();
        loop {
            let complete = st
                .rounds
                .get(&round)
                .map(|parts| parts.iter().all(|p| p.is_some()))
                .unwrap_or(false);
            if complete {
                break;
            }
            let now = Instant::now();
            if now >= deadline {
                let missing: Vec<RankId> = st.rounds[&round]
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.is_none())
                    .map(|(r, _)| r as RankId)
                    .collect();
                return Err(DfbError::Timeout(format!(
                    "gather round {round} missing ranks {missing:?}"
                )));
            }
            let (next, _) = self.inner.gather_cv.wait_timeout(st, deadline - now).unwrap();
            st = next;
            self.check_fatal()?;
        }
        let parts = st.rounds.remove(&round).unwrap();
        let mut data = Vec::new();
        let mut offsets = Vec::with_capacity(self.size as usize);
        for p in parts {
            offsets.push(data.len());
            data.extend_from_slice(&p.unwrap());
        }
        Ok(Some(GatherResult { data, offsets }))
    }

    /// Barrier: gather zero bytes to rank 0, then rank 0 broadcasts a
    /// release frame over the same connections.
    pub fn barrier(&self) -> Result<()> {
        let round = self.barrier_round.fetch_add(1, Ordering::SeqCst);
        let root: RankId = 0;
        let gathered = self.gather(root, &[])?;
        if self.rank == root {
            debug_assert!(gathered.is_some());
            for dest in 0..self.size {
                if dest == root {
                    continue;
                }
                let env = Envelope {
                    src: self.rank,
                    dest,
                    object: CONTROL_RELEASE,
                    flags: 0,
                    payload: round.to_le_bytes().to_vec(),
                };
                self.count_send(&env);
                let _ = self.outbox.send(Outgoing::Env(env));
            }
            return Ok(());
        }
        let deadline = Instant::now() + self.sync_deadline;
        let mut st = self.inner.barrier.lock().unwrap();
        while st.released_round < round {
            let now = Instant::now();
            if now >= deadline {
                return Err(DfbError::Timeout(format!(
                    "barrier round {round} not released"
                )));
            }
            let (next, _) = self
                .inner
                .barrier_cv
                .wait_timeout(st, deadline - now)
                .unwrap();
            st = next;
            self.check_fatal()?;
        }
        Ok(())
    }

    /// Stop the layer's threads. Pending outbox messages are flushed first.
    pub fn shutdown(&self) {
        let _ = self.outbox.send(Outgoing::Shutdown);
        self.inner.running.store(false, Ordering::Release);
        let mut threads = self.threads.lock().unwrap();
        for t in threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Inner {
    fn set_fatal(&self, msg: String) {
        let mut slot = self.fatal.lock().unwrap();
        if slot.is_none() {
            *slot = Some(msg);
        }
        drop(slot);
        self.gather_cv.notify_all();
        self.barrier_cv.notify_all();
    }

    fn deliver(&self, env: Envelope) {
        self.counters
            .bytes_received
            .fetch_add(env.wire_len(), Ordering::Relaxed);
        match env.object {
            CONTROL_GATHER => {
                if env.payload.len() < 8 {
                    self.set_fatal("malformed gather frame".into());
                    return;
                }
                let round = u64::from_le_bytes(env.payload[0..8].try_into().unwrap());
                let size = self.transport.size() as usize;
                let mut st = self.gather.lock().unwrap();
                let parts = st.rounds.entry(round).or_insert_with(|| vec![None; size]);
                parts[env.src as usize] = Some(env.payload[8..].to_vec());
                drop(st);
                self.gather_cv.notify_all();
            }
            CONTROL_RELEASE => {
                let round = u64::from_le_bytes(env.payload[0..8].try_into().unwrap());
                let mut st = self.barrier.lock().unwrap();
                st.released_round = st.released_round.max(round);
                drop(st);
                self.barrier_cv.notify_all();
            }
            object => {
                let payload = if env.flags & FLAG_COMPRESSED != 0 {
                    match decompress(&env.payload) {
                        Ok(p) => p,
                        Err(e) => {
                            self.set_fatal(format!("corrupt payload from rank {}: {e}", env.src));
                            return;
                        }
                    }
                } else {
                    env.payload
                };
                let mut reg = self.registry.lock().unwrap();
                match reg.get_mut(&object) {
                    Some(handler) => handler(env.src, payload),
                    None => {
                        self.unknown_receiver.fetch_add(1, Ordering::Relaxed);
                        if self.strict {
                            self.set_fatal(format!(
                                "envelope for unregistered object {object} from rank {}",
                                env.src
                            ));
                        }
                    }
                }
            }
        }
    }
}

impl Drop for Messenger {
    fn drop(&mut self) {
        self.shutdown();
    }
}
