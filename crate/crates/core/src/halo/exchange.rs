//! The three exchange strategies, layered on a [`Transport`].
//!
//! All strategies move the same frames and deliver identical payloads; they
//! differ only in *when* transport work happens relative to the compute
//! phases:
//!
//! * `BlockingSequential` performs every send and receive inside WaitComm.
//! * `PostedOverlap` initiates sends at PostComm and completes receives at
//!   WaitComm; whether progress happens during InteriorCompute depends on
//!   the transport.
//! * `CommThread` hands all transport work to one dedicated thread per rank
//!   at PostComm, guaranteeing progress concurrent with InteriorCompute.
//!
//! Receives are matched by (peer, step, face); frames for a future step are
//! buffered until that step asks for them.

use std::collections::HashMap;
use std::thread::JoinHandle;

use crossbeam_channel::{unbounded, Receiver, Sender};

use crate::error::{Error, Result};
use crate::halo::transport::Transport;
use crate::halo::wire::{decode_message, encode_message, peek_step};
use crate::halo::{FaceId, HaloMessage};
use crate::perf::trace::{Epoch, TraceEvent};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeStrategy {
    BlockingSequential,
    PostedOverlap,
    CommThread,
}

impl std::fmt::Display for ExchangeStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExchangeStrategy::BlockingSequential => write!(f, "blocking"),
            ExchangeStrategy::PostedOverlap => write!(f, "posted"),
            ExchangeStrategy::CommThread => write!(f, "commthread"),
        }
    }
}

impl std::str::FromStr for ExchangeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "blocking" | "blockingsequential" => Ok(ExchangeStrategy::BlockingSequential),
            "posted" | "postedoverlap" => Ok(ExchangeStrategy::PostedOverlap),
            "commthread" => Ok(ExchangeStrategy::CommThread),
            other => Err(Error::Config(format!(
                "unknown exchange strategy '{other}' (expected blocking, posted, or commthread)"
            ))),
        }
    }
}

enum Work {
    Step {
        step: u64,
        frames: Vec<(u32, Vec<u8>)>,
        expect: usize,
    },
    Shutdown,
}

enum Engine<T: Value> {
    Direct {
        transport: Box<dyn Transport>,
        queued: Vec<HaloMessage<T>>,
    },
    Threaded {
        work_tx: Sender<Work>,
        done_rx: Receiver<Result<Vec<u8>>>,
        handle: JoinHandle<Vec<TraceEvent>>,
    },
}

/// Per-rank exchange driver, persistent across time steps.
pub struct Exchanger<T: Value> {
    rank: u32,
    strategy: ExchangeStrategy,
    /// This rank's exchangeable faces and the peer behind each.
    neighbors: Vec<(FaceId, u32)>,
    engine: Engine<T>,
    pending: HashMap<(u32, u64, FaceId), Vec<T>>,
    sent: u64,
    received: u64,
}

impl<T: Value> Exchanger<T> {
    /// Wrap `transport` for `strategy`. `comm_lane` is the trace lane used
    /// by the communication thread when the strategy spawns one.
    pub fn new(
        strategy: ExchangeStrategy,
        transport: Box<dyn Transport>,
        neighbors: Vec<(FaceId, u32)>,
        epoch: Epoch,
        comm_lane: u32,
    ) -> Self {
        let rank = transport.rank();
        let engine = match strategy {
            ExchangeStrategy::CommThread if !neighbors.is_empty() => {
                let (work_tx, work_rx) = unbounded::<Work>();
                let (done_tx, done_rx) = unbounded::<Result<Vec<u8>>>();
                let handle = std::thread::spawn(move || {
                    comm_thread_main(transport, work_rx, done_tx, epoch, rank, comm_lane)
                });
                Engine::Threaded {
                    work_tx,
                    done_rx,
                    handle,
                }
            }
            _ => Engine::Direct {
                transport,
                queued: Vec::new(),
            },
        };
        Exchanger {
            rank,
            strategy,
            neighbors,
            engine,
            pending: HashMap::new(),
            sent: 0,
            received: 0,
        }
    }

    pub fn strategy(&self) -> ExchangeStrategy {
        self.strategy
    }

    pub fn messages_sent(&self) -> u64 {
        self.sent
    }

    pub fn messages_received(&self) -> u64 {
        self.received
    }

    fn step_error(&self, face: Option<FaceId>, step: u64, message: String) -> Error {
        Error::Step {
            rank: self.rank,
            face,
            step,
            message,
        }
    }

    fn check_outgoing(&self, outgoing: &[HaloMessage<T>], step: u64) -> Result<()> {
        if outgoing.len() != self.neighbors.len() {
            return Err(self.step_error(
                None,
                step,
                format!(
                    "expected {} outgoing messages, got {}",
                    self.neighbors.len(),
                    outgoing.len()
                ),
            ));
        }
        for msg in outgoing {
            let matches = self
                .neighbors
                .iter()
                .any(|&(face, peer)| msg.dest == peer && msg.face == face.opposite());
            if !matches || msg.step != step || msg.source != self.rank {
                return Err(self.step_error(
                    Some(msg.face),
                    step,
                    format!("message to rank {} does not match any neighbor face", msg.dest),
                ));
            }
        }
        Ok(())
    }

    /// Initiate the step's sends per the strategy. Called at PostComm with
    /// exactly one message per neighbor face.
    pub fn post(&mut self, outgoing: Vec<HaloMessage<T>>, step: u64) -> Result<()> {
        self.check_outgoing(&outgoing, step)?;
        let n = outgoing.len();
        match &mut self.engine {
            Engine::Direct { transport, queued } => match self.strategy {
                ExchangeStrategy::BlockingSequential => {
                    queued.extend(outgoing);
                }
                _ => {
                    for msg in &outgoing {
                        transport.send(msg.dest, encode_message(msg))?;
                    }
                    self.sent += n as u64;
                }
            },
            Engine::Threaded { work_tx, .. } => {
                let frames = outgoing
                    .iter()
                    .map(|m| (m.dest, encode_message(m)))
                    .collect();
                // Frames for this step that arrived early were forwarded in a
                // previous window and sit in `pending` already; the thread
                // must not wait for them a second time.
                let stashed = self.pending.keys().filter(|&&(_, s, _)| s == step).count();
                work_tx
                    .send(Work::Step {
                        step,
                        frames,
                        expect: n - stashed,
                    })
                    .map_err(|_| {
                        self.step_error(None, step, "communication thread is gone".into())
                    })?;
                self.sent += n as u64;
            }
        }
        Ok(())
    }

    fn next_frame(&mut self, step: u64) -> Result<Vec<u8>> {
        match &mut self.engine {
            Engine::Direct { transport, .. } => transport.recv_blocking(),
            Engine::Threaded { done_rx, .. } => done_rx
                .recv()
                .map_err(|_| self.step_error(None, step, "communication thread is gone".into()))?,
        }
    }

    fn stash(&mut self, frame: Vec<u8>, step: u64) -> Result<()> {
        let msg = decode_message::<T>(&frame)?;
        if msg.dest != self.rank {
            return Err(self.step_error(
                Some(msg.face),
                step,
                format!("frame addressed to rank {} arrived here", msg.dest),
            ));
        }
        let known = self
            .neighbors
            .iter()
            .any(|&(face, peer)| face == msg.face && peer == msg.source);
        if !known {
            return Err(self.step_error(
                Some(msg.face),
                msg.step,
                format!("unexpected sender rank {}", msg.source),
            ));
        }
        if msg.step < step {
            return Err(self.step_error(
                Some(msg.face),
                msg.step,
                format!("stale message from rank {} (collecting step {step})", msg.source),
            ));
        }
        self.received += 1;
        self.pending
            .insert((msg.source, msg.step, msg.face), msg.payload);
        Ok(())
    }

    /// Complete the step's receives and return each face's payload, in
    /// canonical face order. Called at WaitComm.
    pub fn wait(&mut self, step: u64) -> Result<Vec<(FaceId, Vec<T>)>> {
        if let Engine::Direct { transport, queued } = &mut self.engine {
            if self.strategy == ExchangeStrategy::BlockingSequential && !queued.is_empty() {
                let batch = std::mem::take(queued);
                for msg in &batch {
                    transport.send(msg.dest, encode_message(msg))?;
                }
                self.sent += batch.len() as u64;
            }
        }
        let expected: Vec<(u32, u64, FaceId)> = self
            .neighbors
            .iter()
            .map(|&(face, peer)| (peer, step, face))
            .collect();
        while expected.iter().any(|k| !self.pending.contains_key(k)) {
            let frame = self.next_frame(step)?;
            self.stash(frame, step)?;
        }
        let mut out = Vec::with_capacity(expected.len());
        for key in expected {
            out.push((key.2, self.pending.remove(&key).unwrap()));
        }
        out.sort_by_key(|(face, _)| face.code());
        Ok(out)
    }

    /// Post and wait in one call.
    pub fn exchange(
        &mut self,
        outgoing: Vec<HaloMessage<T>>,
        step: u64,
    ) -> Result<Vec<(FaceId, Vec<T>)>> {
        self.post(outgoing, step)?;
        self.wait(step)
    }

    /// Tear down, returning (sent, received, comm-thread trace events).
    pub fn shutdown(self) -> Result<(u64, u64, Vec<TraceEvent>)> {
        match self.engine {
            Engine::Direct { .. } => Ok((self.sent, self.received, Vec::new())),
            Engine::Threaded { work_tx, handle, .. } => {
                let _ = work_tx.send(Work::Shutdown);
                let events = handle
                    .join()
                    .map_err(|_| Error::Comm("communication thread panicked".into()))?;
                Ok((self.sent, self.received, events))
            }
        }
    }
}

fn comm_thread_main(
    transport: Box<dyn Transport>,
    work_rx: Receiver<Work>,
    done_tx: Sender<Result<Vec<u8>>>,
    epoch: Epoch,
    rank: u32,
    lane: u32,
) -> Vec<TraceEvent> {
    let mut events = Vec::new();
    while let Ok(work) = work_rx.recv() {
        match work {
            Work::Shutdown => break,
            Work::Step {
                step,
                frames,
                expect,
            } => {
                let send_start = epoch.elapsed_ns();
                for (dest, frame) in frames {
                    if let Err(e) = transport.send(dest, frame) {
                        let _ = done_tx.send(Err(e));
                        return events;
                    }
                }
                events.push(TraceEvent {
                    rank,
                    tid: lane,
                    name: "comm_send".into(),
                    start_ns: send_start,
                    dur_ns: epoch.elapsed_ns() - send_start,
                    step: Some(step),
                });
                let recv_start = epoch.elapsed_ns();
                // A neighbor that already finished this step can deliver its
                // next-step frame before a slower neighbor's current frame.
                // Such early frames are forwarded but must not consume this
                // step's quota, or the still-missing frame would never be
                // read. Unreadable frames count: they abort decoding upstream.
                let mut arrived = 0usize;
                while arrived < expect {
                    let result = transport.recv_blocking();
                    let failed = result.is_err();
                    let counts = match &result {
                        Ok(frame) => peek_step(frame).is_none_or(|s| s <= step),
                        Err(_) => true,
                    };
                    if done_tx.send(result).is_err() || failed {
                        return events;
                    }
                    if counts {
                        arrived += 1;
                    }
                }
                events.push(TraceEvent {
                    rank,
                    tid: lane,
                    name: "comm_recv".into(),
                    start_ns: recv_start,
                    dur_ns: epoch.elapsed_ns() - recv_start,
                    step: Some(step),
                });
            }
        }
    }
    events
}
