//! Tile scheduling over a persistent worker pool.
//!
//! The collapsed 2D tile loop runs under one of two policies: `Static`
//! hands each worker one contiguous near-equal chunk of tile indices,
//! `Dynamic` lets workers claim one index at a time from a shared atomic
//! counter. Both execute every index exactly once; with disjoint-tile
//! bodies the field results are bitwise identical across policies.
//!
//! `simulate_makespan` evaluates both policies under an explicit cost
//! vector. Dynamic claiming is lowest-index-first, which makes the
//! simulation deterministic and mirrors the executor. Note that dynamic
//! is not universally better under this model: alternating cost rows can
//! make greedy claiming commit a worker to a large tile right before the
//! tail (see the unit tests for a minimal case).

use std::ops::Range;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, Sender};

use crate::error::{Error, Result};
use crate::perf::trace::Epoch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulePolicy {
    Static,
    Dynamic,
}

impl std::fmt::Display for SchedulePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SchedulePolicy::Static => write!(f, "static"),
            SchedulePolicy::Dynamic => write!(f, "dynamic"),
        }
    }
}

impl std::str::FromStr for SchedulePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "static" => Ok(SchedulePolicy::Static),
            "dynamic" => Ok(SchedulePolicy::Dynamic),
            other => Err(Error::Config(format!(
                "unknown schedule policy '{other}' (expected static or dynamic)"
            ))),
        }
    }
}

/// Contiguous near-equal chunks: the first `n % threads` workers get one
/// extra index, so chunk sizes differ by at most 1 and are non-increasing
/// in worker id. Always returns exactly `threads` ranges.
pub fn static_partition(n: usize, threads: usize) -> Vec<Range<usize>> {
    assert!(threads >= 1, "static_partition requires threads >= 1");
    let base = n / threads;
    let rem = n % threads;
    let mut out = Vec::with_capacity(threads);
    let mut start = 0;
    for w in 0..threads {
        let size = base + usize::from(w < rem);
        out.push(start..start + size);
        start += size;
    }
    out
}

/// Predicted loop completion time for a per-tile cost vector.
pub fn simulate_makespan(costs: &[u64], threads: usize, policy: SchedulePolicy) -> u64 {
    assert!(threads >= 1, "simulate_makespan requires threads >= 1");
    match policy {
        SchedulePolicy::Static => static_partition(costs.len(), threads)
            .into_iter()
            .map(|r| costs[r].iter().sum())
            .max()
            .unwrap_or(0),
        SchedulePolicy::Dynamic => {
            let mut free = vec![0u64; threads];
            for &c in costs {
                let w = (0..threads).min_by_key(|&i| (free[i], i)).unwrap();
                free[w] += c;
            }
            free.into_iter().max().unwrap_or(0)
        }
    }
}

/// Per-worker accounting for one collapsed-loop execution.
#[derive(Debug, Clone)]
pub struct WorkerStats {
    pub busy: Vec<Duration>,
    pub idle: Vec<Duration>,
    pub tiles: Vec<usize>,
    pub cells: Vec<u64>,
    /// (first tile start, last tile end) in ns since the run epoch.
    pub envelopes: Vec<Option<(u64, u64)>>,
    pub wall: Duration,
}

impl WorkerStats {
    pub fn total_cells(&self) -> u64 {
        self.cells.iter().sum()
    }

    pub fn total_tiles(&self) -> usize {
        self.tiles.iter().sum()
    }
}

/// max(busy)/mean(busy) − 1 across workers; 0 is perfect balance.
pub fn imbalance_from_busy(busy: &[Duration]) -> Result<f64> {
    if busy.is_empty() {
        return Err(Error::InvalidArgument("imbalance of zero workers".into()));
    }
    let ns: Vec<f64> = busy.iter().map(|d| d.as_secs_f64()).collect();
    let mean = ns.iter().sum::<f64>() / ns.len() as f64;
    if mean <= 0.0 {
        return Err(Error::InvalidArgument(
            "imbalance undefined: no worker accumulated busy time".into(),
        ));
    }
    let max = ns.iter().cloned().fold(0.0f64, f64::max);
    Ok(max / mean - 1.0)
}

pub fn imbalance_metric(stats: &WorkerStats) -> Result<f64> {
    imbalance_from_busy(&stats.busy)
}

type BodyFn = dyn Fn(usize) -> std::result::Result<u64, String> + Sync;

/// Raw pointer to a caller-owned loop body. Lifetime is managed by
/// `execute_collapsed_loop`, which does not return until every worker has
/// reported back, so the pointee strictly outlives all uses.
struct ErasedBody(*const BodyFn);
unsafe impl Send for ErasedBody {}

enum WorkShare {
    Chunk(Range<usize>),
    Queue { next: Arc<AtomicUsize>, n: usize },
}

struct JobMsg {
    body: ErasedBody,
    share: WorkShare,
    epoch: Epoch,
    abort: Arc<AtomicBool>,
}

struct WorkerReport {
    busy_ns: u64,
    tiles: usize,
    cells: u64,
    envelope: Option<(u64, u64)>,
    error: Option<(usize, String)>,
}

fn run_share(job: &JobMsg) -> WorkerReport {
    // Safety: the pointee lives until execute_collapsed_loop returns,
    // which happens only after this report is delivered.
    let body = unsafe { &*job.body.0 };
    let mut report = WorkerReport {
        busy_ns: 0,
        tiles: 0,
        cells: 0,
        envelope: None,
        error: None,
    };
    let mut run_tile = |i: usize| -> bool {
        let start = job.epoch.elapsed_ns();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| body(i)));
        let end = job.epoch.elapsed_ns();
        report.busy_ns += end - start;
        report.tiles += 1;
        report.envelope = Some((report.envelope.map_or(start, |(s, _)| s), end));
        match outcome {
            Ok(Ok(cells)) => {
                report.cells += cells;
                true
            }
            Ok(Err(message)) => {
                report.error = Some((i, message));
                job.abort.store(true, Ordering::Relaxed);
                false
            }
            Err(_) => {
                report.error = Some((i, "loop body panicked".into()));
                job.abort.store(true, Ordering::Relaxed);
                false
            }
        }
    };
    match &job.share {
        WorkShare::Chunk(range) => {
            for i in range.clone() {
                if job.abort.load(Ordering::Relaxed) || !run_tile(i) {
                    break;
                }
            }
        }
        WorkShare::Queue { next, n } => loop {
            if job.abort.load(Ordering::Relaxed) {
                break;
            }
            let i = next.fetch_add(1, Ordering::Relaxed);
            if i >= *n || !run_tile(i) {
                break;
            }
        },
    }
    report
}

fn worker_main(rx: Receiver<JobMsg>, tx: Sender<(usize, WorkerReport)>, tid: usize) {
    while let Ok(job) = rx.recv() {
        let report = run_share(&job);
        if tx.send((tid, report)).is_err() {
            break;
        }
    }
}

/// Persistent pool of compute workers, one per configured thread. With one
/// thread the loop runs inline on the caller; worker accounting is
/// identical either way.
pub struct WorkerPool {
    threads: usize,
    job_txs: Vec<Sender<JobMsg>>,
    report_rx: Receiver<(usize, WorkerReport)>,
    handles: Vec<JoinHandle<()>>,
}

impl WorkerPool {
    pub fn new(threads: usize) -> Result<WorkerPool> {
        if threads == 0 {
            return Err(Error::InvalidArgument(
                "worker pool requires at least one thread".into(),
            ));
        }
        let (report_tx, report_rx) = unbounded();
        let mut job_txs = Vec::new();
        let mut handles = Vec::new();
        if threads > 1 {
            for tid in 0..threads {
                let (job_tx, job_rx) = unbounded::<JobMsg>();
                let tx = report_tx.clone();
                handles.push(std::thread::spawn(move || worker_main(job_rx, tx, tid)));
                job_txs.push(job_tx);
            }
        }
        Ok(WorkerPool {
            threads,
            job_txs,
            report_rx,
            handles,
        })
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    /// Run `body` once for every tile index in `0..n_tiles` under `policy`.
    /// The body receives the tile index and returns the number of cells it
    /// processed; the first body failure aborts the loop.
    pub fn execute_collapsed_loop<F>(
        &mut self,
        n_tiles: usize,
        policy: SchedulePolicy,
        epoch: Epoch,
        body: F,
    ) -> Result<WorkerStats>
    where
        F: Fn(usize) -> std::result::Result<u64, String> + Sync,
    {
        let obj: &(dyn Fn(usize) -> std::result::Result<u64, String> + Sync) = &body;
        // Safety: transmute only erases the lifetime; fat-pointer layout is
        // identical. See ErasedBody for why the pointee outlives all uses.
        let ptr: *const BodyFn = unsafe {
            std::mem::transmute::<&(dyn Fn(usize) -> std::result::Result<u64, String> + Sync), *const BodyFn>(obj)
        };
        let abort = Arc::new(AtomicBool::new(false));
        let queue = Arc::new(AtomicUsize::new(0));
        let chunks = static_partition(n_tiles, self.threads);
        let share_for = |tid: usize| match policy {
            SchedulePolicy::Static => WorkShare::Chunk(chunks[tid].clone()),
            SchedulePolicy::Dynamic => WorkShare::Queue {
                next: Arc::clone(&queue),
                n: n_tiles,
            },
        };

        let wall_start = epoch.elapsed_ns();
        let mut reports: Vec<Option<WorkerReport>> = (0..self.threads).map(|_| None).collect();
        if self.threads == 1 {
            let job = JobMsg {
                body: ErasedBody(ptr),
                share: share_for(0),
                epoch,
                abort,
            };
            reports[0] = Some(run_share(&job));
        } else {
            for (tid, job_tx) in self.job_txs.iter().enumerate() {
                let job = JobMsg {
                    body: ErasedBody(ptr),
                    share: share_for(tid),
                    epoch,
                    abort: Arc::clone(&abort),
                };
                job_tx
                    .send(job)
                    .map_err(|_| Error::Comm("worker pool thread is gone".into()))?;
            }
            for _ in 0..self.threads {
                let (tid, report) = self
                    .report_rx
                    .recv()
                    .map_err(|_| Error::Comm("worker pool thread is gone".into()))?;
                reports[tid] = Some(report);
            }
        }
        let wall_end = epoch.elapsed_ns();

        let wall = Duration::from_nanos(wall_end - wall_start);
        let mut stats = WorkerStats {
            busy: Vec::with_capacity(self.threads),
            idle: Vec::with_capacity(self.threads),
            tiles: Vec::with_capacity(self.threads),
            cells: Vec::with_capacity(self.threads),
            envelopes: Vec::with_capacity(self.threads),
            wall,
        };
        let mut first_error: Option<(usize, String)> = None;
        for report in reports.into_iter().map(Option::unwrap) {
            let busy = Duration::from_nanos(report.busy_ns);
            stats.idle.push(wall.saturating_sub(busy));
            stats.busy.push(busy);
            stats.tiles.push(report.tiles);
            stats.cells.push(report.cells);
            stats.envelopes.push(report.envelope);
            if let Some((tile, message)) = report.error {
                let replace = first_error.as_ref().map_or(true, |(t, _)| tile < *t);
                if replace {
                    first_error = Some((tile, message));
                }
            }
        }
        if let Some((tile, message)) = first_error {
            return Err(Error::LoopBody { tile, message });
        }
        Ok(stats)
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.job_txs.clear();
        for handle in self.handles.drain(..) {
            let _ = handle.join();
        }
    }
}
