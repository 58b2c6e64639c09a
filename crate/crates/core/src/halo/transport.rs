//! Message transports: in-process channels and TCP sockets.
//!
//! Both present the same minimal contract: fire-and-forget `send` of one
//! encoded frame to a peer rank, and a blocking `recv` of the next inbound
//! frame addressed to this rank. Per rank pair, frames arrive in send order
//! with no loss or duplication; matching by (peer, step, face) happens a
//! layer up in the exchange logic.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};

use crate::error::{Error, Result};
use crate::halo::wire;

pub trait Transport: Send {
    fn rank(&self) -> u32;
    /// Queue one frame for `dest`. Returns once the frame is handed to the
    /// transport; delivery is asynchronous.
    fn send(&self, dest: u32, frame: Vec<u8>) -> Result<()>;
    /// Block until the next inbound frame arrives.
    fn recv_blocking(&self) -> Result<Vec<u8>>;
}

struct Envelope {
    frame: Vec<u8>,
    deliver_at: Instant,
}

/// Builds the channel mesh connecting `n` in-process rank endpoints, with an
/// optional injected per-message latency modeling a slow interconnect.
pub struct InProcRegistry;

impl InProcRegistry {
    pub fn endpoints(n: u32, latency: Duration) -> Vec<InProcEndpoint> {
        let mut senders = Vec::with_capacity(n as usize);
        let mut receivers = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let (tx, rx) = unbounded::<Envelope>();
            senders.push(tx);
            receivers.push(rx);
        }
        receivers
            .into_iter()
            .enumerate()
            .map(|(rank, inbox)| InProcEndpoint {
                rank: rank as u32,
                latency,
                peers: senders.clone(),
                inbox,
            })
            .collect()
    }
}

/// One rank's endpoint in the in-process mesh.
pub struct InProcEndpoint {
    rank: u32,
    latency: Duration,
    peers: Vec<Sender<Envelope>>,
    inbox: Receiver<Envelope>,
}

impl Transport for InProcEndpoint {
    fn rank(&self) -> u32 {
        self.rank
    }

    fn send(&self, dest: u32, frame: Vec<u8>) -> Result<()> {
        let peer = self.peers.get(dest as usize).ok_or_else(|| {
            Error::Comm(format!("rank {} has no peer {dest}", self.rank))
        })?;
        peer.send(Envelope {
            frame,
            deliver_at: Instant::now() + self.latency,
        })
        .map_err(|_| Error::Comm(format!("peer {dest} hung up")))
    }

    fn recv_blocking(&self) -> Result<Vec<u8>> {
        let env = self
            .inbox
            .recv()
            .map_err(|_| Error::Comm(format!("rank {}: all peers hung up", self.rank)))?;
        // The injected latency is modeled at the receiver: the frame exists
        // but is not observable before its delivery instant.
        let now = Instant::now();
        if env.deliver_at > now {
            std::thread::sleep(env.deliver_at - now);
        }
        Ok(env.frame)
    }
}

fn fold_u64(hash: u64, v: u64) -> u64 {
    // FNV-1a over the 8 bytes.
    let mut h = hash;
    for b in v.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Order-sensitive digest of the run geometry, exchanged in the TCP
/// handshake so mismatched launches fail fast instead of corrupting fields.
pub fn config_checksum(parts: &[u64]) -> u64 {
    parts.iter().fold(0xcbf29ce484222325, |h, &v| fold_u64(h, v))
}

const HANDSHAKE_LEN: usize = 12;

fn handshake_bytes(rank: u32, checksum: u64) -> [u8; HANDSHAKE_LEN] {
    let mut b = [0u8; HANDSHAKE_LEN];
    b[..4].copy_from_slice(&rank.to_le_bytes());
    b[4..].copy_from_slice(&checksum.to_le_bytes());
    b
}

fn read_handshake(stream: &mut TcpStream) -> Result<(u32, u64)> {
    let mut b = [0u8; HANDSHAKE_LEN];
    stream.read_exact(&mut b)?;
    Ok((
        u32::from_le_bytes(b[..4].try_into().unwrap()),
        u64::from_le_bytes(b[4..].try_into().unwrap()),
    ))
}

fn read_frame(stream: &mut TcpStream) -> std::io::Result<Option<Vec<u8>>> {
    let mut header = vec![0u8; wire::HEADER_LEN];
    match stream.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let (_, payload_bytes) = wire::header_payload_bytes(&header)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
    header.resize(wire::HEADER_LEN + payload_bytes, 0);
    stream.read_exact(&mut header[wire::HEADER_LEN..])?;
    Ok(Some(header))
}

/// TCP endpoint: one process (or thread) per rank, one long-lived
/// bidirectional connection per neighbor pair. Rank i listens on
/// `base_port + i`; the lower rank of each pair connects, the higher
/// accepts. A reader thread per connection drains inbound frames into a
/// common inbox, so sends never block on an unread peer stream.
pub struct TcpTransport {
    rank: u32,
    writers: HashMap<u32, Mutex<TcpStream>>,
    inbox: Receiver<std::io::Result<Vec<u8>>>,
    readers: Vec<std::thread::JoinHandle<()>>,
    // Keeps the sender side alive until drop so recv sees hangup, not panic.
    _inbox_tx: Sender<std::io::Result<Vec<u8>>>,
}

impl TcpTransport {
    pub fn connect(
        rank: u32,
        neighbors: &[u32],
        base_port: u16,
        checksum: u64,
        timeout: Duration,
    ) -> Result<Self> {
        let listener = TcpListener::bind(("127.0.0.1", base_port + rank as u16)).map_err(|e| {
            Error::Comm(format!(
                "rank {rank}: cannot listen on port {}: {e}",
                base_port + rank as u16
            ))
        })?;
        let deadline = Instant::now() + timeout;
        let mut streams: HashMap<u32, TcpStream> = HashMap::new();
        let lower: Vec<u32> = neighbors.iter().copied().filter(|&p| p < rank).collect();
        let higher: Vec<u32> = neighbors.iter().copied().filter(|&p| p > rank).collect();

        for &peer in &lower {
            let addr = ("127.0.0.1", base_port + peer as u16);
            let stream = loop {
                match TcpStream::connect(addr) {
                    Ok(s) => break s,
                    Err(e) => {
                        if Instant::now() > deadline {
                            return Err(Error::Comm(format!(
                                "rank {rank}: peer {peer} never listened: {e}"
                            )));
                        }
                        std::thread::sleep(Duration::from_millis(20));
                    }
                }
            };
            let mut stream = stream;
            stream.set_nodelay(true).ok();
            stream
                .set_read_timeout(Some(deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1))))
                .ok();
            stream.write_all(&handshake_bytes(rank, checksum))?;
            let (peer_rank, peer_sum) = read_handshake(&mut stream)?;
            stream.set_read_timeout(None).ok();
            if peer_rank != peer || peer_sum != checksum {
                return Err(Error::Comm(format!(
                    "rank {rank}: handshake mismatch with port {}: got rank {peer_rank}, \
                     checksum 0x{peer_sum:016x} vs 0x{checksum:016x}",
                    base_port + peer as u16
                )));
            }
            streams.insert(peer, stream);
        }

        listener.set_nonblocking(true).ok();
        let mut expected: Vec<u32> = higher.clone();
        while !expected.is_empty() {
            if Instant::now() > deadline {
                return Err(Error::Comm(format!(
                    "rank {rank}: timed out waiting for connections from {expected:?}"
                )));
            }
            let (mut stream, _) = match listener.accept() {
                Ok(pair) => pair,
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(10));
                    continue;
                }
                Err(e) => return Err(Error::Comm(format!("rank {rank}: accept failed: {e}"))),
            };
            stream.set_nonblocking(false).ok();
            stream.set_nodelay(true).ok();
            stream
                .set_read_timeout(Some(deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1))))
                .ok();
            let (peer_rank, peer_sum) = read_handshake(&mut stream)?;
            stream.set_read_timeout(None).ok();
            if peer_sum != checksum {
                return Err(Error::Comm(format!(
                    "rank {rank}: handshake checksum mismatch from rank {peer_rank}"
                )));
            }
            if let Some(pos) = expected.iter().position(|&p| p == peer_rank) {
                expected.remove(pos);
            } else {
                return Err(Error::Comm(format!(
                    "rank {rank}: unexpected connection from rank {peer_rank}"
                )));
            }
            stream.write_all(&handshake_bytes(rank, checksum))?;
            streams.insert(peer_rank, stream);
        }

        let (inbox_tx, inbox) = unbounded();
        let mut writers = HashMap::new();
        let mut readers = Vec::new();
        for (peer, stream) in streams {
            let mut read_half = stream.try_clone()?;
            let tx = inbox_tx.clone();
            readers.push(std::thread::spawn(move || loop {
                match read_frame(&mut read_half) {
                    Ok(Some(frame)) => {
                        if tx.send(Ok(frame)).is_err() {
                            return;
                        }
                    }
                    Ok(None) => return,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        return;
                    }
                }
            }));
            writers.insert(peer, Mutex::new(stream));
        }
        Ok(TcpTransport {
            rank,
            writers,
            inbox,
            readers,
            _inbox_tx: inbox_tx,
        })
    }
}

impl Transport for TcpTransport {
    fn rank(&self) -> u32 {
        self.rank
    }

    fn send(&self, dest: u32, frame: Vec<u8>) -> Result<()> {
        let writer = self.writers.get(&dest).ok_or_else(|| {
            Error::Comm(format!("rank {}: no connection to rank {dest}", self.rank))
        })?;
        let mut stream = writer.lock().unwrap();
        stream.write_all(&frame)?;
        stream.flush()?;
        Ok(())
    }

    fn recv_blocking(&self) -> Result<Vec<u8>> {
        match self.inbox.recv() {
            Ok(Ok(frame)) => Ok(frame),
            Ok(Err(e)) => Err(Error::Comm(format!(
                "rank {}: connection failed: {e}",
                self.rank
            ))),
            Err(_) => Err(Error::Comm(format!(
                "rank {}: all connections closed",
                self.rank
            ))),
        }
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        for writer in self.writers.values() {
            if let Ok(stream) = writer.lock() {
                let _ = stream.shutdown(std::net::Shutdown::Both);
            }
        }
        for handle in self.readers.drain(..) {
            let _ = handle.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::halo::wire::encode_message;
    use crate::halo::{FaceId, HaloMessage};

    fn frame(src: u32, dst: u32, step: u64, v: f32) -> Vec<u8> {
        encode_message(&HaloMessage {
            source: src,
            dest: dst,
            step,
            face: FaceId::XLow,
            payload: vec![v],
        })
    }

    #[test]
    fn inproc_delivers_in_send_order() {
        let eps = InProcRegistry::endpoints(2, Duration::ZERO);
        eps[0].send(1, frame(0, 1, 0, 1.0)).unwrap();
        eps[0].send(1, frame(0, 1, 1, 2.0)).unwrap();
        let a = eps[1].recv_blocking().unwrap();
        let b = eps[1].recv_blocking().unwrap();
        assert_eq!(u64::from_le_bytes(a[16..24].try_into().unwrap()), 0);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 1);
    }

    #[test]
    fn inproc_latency_delays_delivery() {
        let eps = InProcRegistry::endpoints(2, Duration::from_millis(30));
        let start = Instant::now();
        eps[1].send(0, frame(1, 0, 0, 1.0)).unwrap();
        eps[0].recv_blocking().unwrap();
        assert!(start.elapsed() >= Duration::from_millis(30));
    }

    #[test]
    fn tcp_pair_exchanges_frames() {
        let base = 41200;
        let sum = config_checksum(&[1, 2, 3]);
        let a = std::thread::spawn(move || {
            let t = TcpTransport::connect(0, &[1], base, sum, Duration::from_secs(10)).unwrap();
            t.send(1, frame(0, 1, 7, 1.5)).unwrap();
            t.recv_blocking().unwrap()
        });
        let b = std::thread::spawn(move || {
            let t = TcpTransport::connect(1, &[0], base, sum, Duration::from_secs(10)).unwrap();
            t.send(0, frame(1, 0, 7, 2.5)).unwrap();
            t.recv_blocking().unwrap()
        });
        let got_a = a.join().unwrap();
        let got_b = b.join().unwrap();
        assert_eq!(u32::from_le_bytes(got_a[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(got_b[8..12].try_into().unwrap()), 0);
    }

    #[test]
    fn tcp_checksum_mismatch_fails_handshake() {
        let base = 41210;
        let a = std::thread::spawn(move || {
            TcpTransport::connect(0, &[1], base, 111, Duration::from_secs(10)).map(|_| ())
        });
        let b = std::thread::spawn(move || {
            TcpTransport::connect(1, &[0], base, 222, Duration::from_secs(10)).map(|_| ())
        });
        let ra = a.join().unwrap();
        let rb = b.join().unwrap();
        assert!(ra.is_err() || rb.is_err());
    }
}
