//! TCP transport: a full mesh of duplex connections established at startup
//! from the rank manifest. Each rank dials every lower rank and accepts from
//! every higher rank; one reader thread per peer preserves per-channel FIFO.

use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::Mutex;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};

use super::manifest::RankManifest;
use super::{check_dest, Envelope, RankId, Transport, WIRE_MAGIC};
use crate::error::{DfbError, Result};

const HANDSHAKE_MAGIC: [u8; 4] = *b"DFBH";
const MAX_PAYLOAD: u32 = 1 << 30;

pub struct TcpTransport {
    rank: RankId,
    size: u32,
    writers: Vec<Option<Mutex<TcpStream>>>,
    inbox_tx: Sender<Envelope>,
    rx: Receiver<Envelope>,
    readers: Vec<JoinHandle<()>>,
}

fn read_frame(stream: &mut TcpStream, src: RankId, dest: RankId) -> Result<Envelope> {
    let mut head = [0u8; 20];
    stream.read_exact(&mut head)?;
    if head[0..4] != WIRE_MAGIC {
        return Err(DfbError::Protocol(format!(
            "bad frame magic from rank {src}: {:02x?}",
            &head[0..4]
        )));
    }
    let object = u64::from_le_bytes(head[4..12].try_into().unwrap());
    let flags = u32::from_le_bytes(head[12..16].try_into().unwrap());
    let len = u32::from_le_bytes(head[16..20].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(DfbError::Protocol(format!("oversized frame: {len} bytes")));
    }
    let mut payload = vec![0u8; len as usize];
    stream.read_exact(&mut payload)?;
    Ok(Envelope {
        src,
        dest,
        object,
        flags,
        payload,
    })
}

fn spawn_reader(
    mut stream: TcpStream,
    src: RankId,
    dest: RankId,
    inbox: Sender<Envelope>,
) -> JoinHandle<()> {
    std::thread::spawn(move || loop {
        match read_frame(&mut stream, src, dest) {
            Ok(env) => {
                if inbox.send(env).is_err() {
                    return;
                }
            }
            // EOF or shutdown: the peer is gone, nothing more will arrive.
            Err(_) => return,
        }
    })
}

impl TcpTransport {
    /// Bind, dial, and accept until the full mesh is up, or fail after
    /// `deadline`.
    pub fn connect(rank: RankId, manifest: &RankManifest, deadline: Duration) -> Result<Self> {
        let size = manifest.len();
        if rank >= size {
            return Err(DfbError::Config(format!("rank {rank} not in manifest")));
        }
        let listener = TcpListener::bind(manifest.addr(rank)).map_err(|e| {
            DfbError::Transport(format!("rank {rank} cannot bind {}: {e}", manifest.addr(rank)))
        })?;

        let (inbox_tx, rx) = unbounded();
        let mut writers: Vec<Option<Mutex<TcpStream>>> = (0..size).map(|_| None).collect();
        let mut readers = Vec::new();

        // Accept from higher ranks on a helper thread while we dial lower
        // ranks, so startup order cannot deadlock.
        let expected_in = (size - 1 - rank) as usize;
        let acceptor: JoinHandle<Result<Vec<(RankId, TcpStream)>>> = {
            std::thread::spawn(move || {
                let mut conns = Vec::with_capacity(expected_in);
                for _ in 0..expected_in {
                    let (mut stream, _) = listener.accept()?;
                    let mut hello = [0u8; 8];
                    stream.read_exact(&mut hello)?;
                    if hello[0..4] != HANDSHAKE_MAGIC {
                        return Err(DfbError::Protocol("bad handshake magic".into()));
                    }
                    let peer = u32::from_le_bytes(hello[4..8].try_into().unwrap());
                    stream.set_nodelay(true)?;
                    conns.push((peer, stream));
                }
                Ok(conns)
            })
        };

        let start = Instant::now();
        for peer in 0..rank {
            let addr = manifest.addr(peer);
            let stream = loop {
                match TcpStream::connect(addr) {
                    Ok(s) => break s,
                    Err(e) => {
                        if start.elapsed() > deadline {
                            return Err(DfbError::Transport(format!(
                                "rank {rank} failed to reach rank {peer} at {addr}: {e}"
                            )));
                        }
                        std::thread::sleep(Duration::from_millis(20));
                    }
                }
            };
            let mut stream = stream;
            stream.set_nodelay(true)?;
            let mut hello = [0u8; 8];
            hello[0..4].copy_from_slice(&HANDSHAKE_MAGIC);
            hello[4..8].copy_from_slice(&rank.to_le_bytes());
            stream.write_all(&hello)?;
            readers.push(spawn_reader(stream.try_clone()?, peer, rank, inbox_tx.clone()));
            writers[peer as usize] = Some(Mutex::new(stream));
        }

        let accepted = acceptor
            .join()
            .map_err(|_| DfbError::Transport("acceptor thread panicked".into()))??;
        for (peer, stream) in accepted {
            if peer <= rank || peer >= size {
                return Err(DfbError::Protocol(format!("unexpected handshake from rank {peer}")));
            }
            readers.push(spawn_reader(stream.try_clone()?, peer, rank, inbox_tx.clone()));
            writers[peer as usize] = Some(Mutex::new(stream));
        }

        Ok(TcpTransport {
            rank,
            size,
            writers,
            inbox_tx,
            rx,
            readers,
        })
    }
}

impl Transport for TcpTransport {
    fn rank(&self) -> RankId {
        self.rank
    }

    fn size(&self) -> u32 {
        self.size
    }

    fn send(&self, mut env: Envelope) -> Result<()> {
        check_dest(env.dest, self.size)?;
        env.src = self.rank;
        let writer = self.writers[env.dest as usize]
            .as_ref()
            .ok_or_else(|| DfbError::Transport(format!("no connection to rank {}", env.dest)))?;
        let frame = env.encode_frame();
        let mut stream = writer.lock().unwrap();
        stream
            .write_all(&frame)
            .map_err(|e| DfbError::Transport(format!("send to rank {} failed: {e}", env.dest)))
    }

    fn loopback(&self, mut env: Envelope) -> Result<()> {
        env.src = self.rank;
        env.dest = self.rank;
        let _ = self.inbox_tx.send(env);
        Ok(())
    }

    fn try_recv(&self) -> Option<Envelope> {
        self.rx.try_recv().ok()
    }

    fn recv_timeout(&self, timeout: Duration) -> Option<Envelope> {
        self.rx.recv_timeout(timeout).ok()
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        for w in self.writers.iter().flatten() {
            let _ = w.lock().unwrap().shutdown(Shutdown::Both);
        }
        for r in self.readers.drain(..) {
            let _ = r.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::SocketAddr;

    fn local_manifest(n: u32) -> RankManifest {
        // Bind throwaway listeners to discover free ports.
        let mut addrs: Vec<SocketAddr> = Vec::new();
        let holders: Vec<TcpListener> = (0..n)
            .map(|_| TcpListener::bind("127.0.0.1:0").unwrap())
            .collect();
        for l in &holders {
            addrs.push(l.local_addr().unwrap());
        }
        drop(holders);
        RankManifest::new(addrs)
    }

    #[test]
    fn three_rank_mesh_exchanges_frames() {
        let manifest = local_manifest(3);
        let handles: Vec<_> = (0..3)
            .map(|rank| {
                let m = manifest.clone();
                std::thread::spawn(move || {
                    TcpTransport::connect(rank, &m, Duration::from_secs(10)).unwrap()
                })
            })
            .collect();
        let transports: Vec<TcpTransport> =
            handles.into_iter().map(|h| h.join().unwrap()).collect();

        // Everyone sends its rank to everyone else.
        for (i, t) in transports.iter().enumerate() {
            for dest in 0..3u32 {
                if dest != i as u32 {
                    t.send(Envelope {
                        src: 0,
                        dest,
                        object: 42,
                        flags: 0,
                        payload: vec![i as u8],
                    })
                    .unwrap();
                }
            }
        }
        for t in &transports {
            let mut seen = Vec::new();
            for _ in 0..2 {
                let env = t.recv_timeout(Duration::from_secs(5)).expect("frame arrives");
                assert_eq!(env.object, 42);
                assert_eq!(env.payload[0] as u32, env.src);
                seen.push(env.src);
            }
            seen.sort_unstable();
            let expect: Vec<u32> = (0..3).filter(|&r| r != t.rank()).collect();
            assert_eq!(seen, expect);
        }
    }
}
