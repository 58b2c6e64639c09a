//! Rank execution and whole-run assembly.
//!
//! A run launches one executor per rank (threads over the in-process
//! transport here; see [`super::tcp`] for the one-process-per-rank path),
//! propagates the configured number of steps, and assembles the per-rank
//! interiors into one global snapshot. Identical configurations produce
//! bitwise-identical snapshots on either transport.

use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Extents, Field3, Halo};
use crate::grid::{decompose, neighbors_of, Decomposition, Subdomain};
use crate::halo::exchange::Exchanger;
use crate::halo::transport::{InProcRegistry, Transport};
use crate::halo::FaceId;
use crate::perf::report::ReportRow;
use crate::perf::trace::{Epoch, TraceEvent};
use crate::runtime::config::{RunConfig, TransportKind, VelocityModel};
use crate::schedule::{imbalance_from_busy, SchedulePolicy, WorkerPool};
use crate::stencil::{LoopOrder, StencilSpec};
use crate::value::{Value, ValueType};
use crate::wavefield::{
    inject_source, RankPipeline, SourcePlacement, StepOptions, WavefieldState,
};

/// Global final field: interior cells only, X-fastest, little-endian.
/// The file layout is a 24-byte header of three u64 extents followed by
/// the payload; the element width is implied by the payload length.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub ext: Extents,
    pub elem_bytes: usize,
    pub data: Vec<u8>,
}

impl Snapshot {
    pub fn value_type(&self) -> Result<ValueType> {
        match self.elem_bytes {
            4 => Ok(ValueType::F32),
            8 => Ok(ValueType::F64),
            other => Err(Error::Protocol(format!(
                "snapshot element width {other} is neither f32 nor f64"
            ))),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(24 + self.data.len());
        bytes.extend_from_slice(&(self.ext.nx as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.ext.ny as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.ext.nz as u64).to_le_bytes());
        bytes.extend_from_slice(&self.data);
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Snapshot> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 24 {
            return Err(Error::Protocol(format!(
                "snapshot {} is shorter than its 24-byte header",
                path.display()
            )));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
        let ext = Extents {
            nx: word(0) as usize,
            ny: word(1) as usize,
            nz: word(2) as usize,
        };
        let payload = bytes.len() - 24;
        let cells = ext.cells();
        if cells == 0 || payload % cells != 0 || !matches!(payload / cells, 4 | 8) {
            return Err(Error::Protocol(format!(
                "snapshot {} payload of {payload} bytes does not fit \
                 {}x{}x{} cells of f32 or f64",
                path.display(),
                ext.nx,
                ext.ny,
                ext.nz
            )));
        }
        Ok(Snapshot {
            ext,
            elem_bytes: payload / cells,
            data: bytes[24..].to_vec(),
        })
    }

    pub fn bitwise_equal(&self, other: &Snapshot) -> bool {
        self.ext == other.ext && self.elem_bytes == other.elem_bytes && self.data == other.data
    }

    fn value_at(&self, i: usize) -> f64 {
        let off = i * self.elem_bytes;
        match self.elem_bytes {
            4 => f32::read_le(&self.data[off..]) as f64,
            _ => f64::read_le(&self.data[off..]),
        }
    }

    /// Largest elementwise |a − b|; errors on shape or width mismatch.
    pub fn max_abs_diff(&self, other: &Snapshot) -> Result<f64> {
        if self.ext != other.ext || self.elem_bytes != other.elem_bytes {
            return Err(Error::Bounds(format!(
                "snapshot shapes differ: {}x{}x{} ({}B) vs {}x{}x{} ({}B)",
                self.ext.nx,
                self.ext.ny,
                self.ext.nz,
                self.elem_bytes,
                other.ext.nx,
                other.ext.ny,
                other.ext.nz,
                other.elem_bytes
            )));
        }
        let mut max = 0.0f64;
        for i in 0..self.ext.cells() {
            max = max.max((self.value_at(i) - other.value_at(i)).abs());
        }
        Ok(max)
    }

    /// Global cell indices whose values differ between the snapshots.
    pub fn differing_cells(&self, other: &Snapshot) -> Result<Vec<(usize, usize, usize)>> {
        if self.ext != other.ext || self.elem_bytes != other.elem_bytes {
            return Err(Error::Bounds("snapshot shapes differ".into()));
        }
        let mut cells = Vec::new();
        for i in 0..self.ext.cells() {
            let off = i * self.elem_bytes;
            if self.data[off..off + self.elem_bytes] != other.data[off..off + self.elem_bytes] {
                let x = i % self.ext.nx;
                let y = (i / self.ext.nx) % self.ext.ny;
                let z = i / (self.ext.nx * self.ext.ny);
                cells.push((x, y, z));
            }
        }
        Ok(cells)
    }
}

/// Test hook: before the named step runs on the named rank, add 1.0 to the
/// center ghost cell of `face` in pCurr, emulating a corrupted exchange.
#[derive(Debug, Clone, Copy)]
pub struct CorruptGhost {
    pub rank: u32,
    pub step: u64,
    pub face: FaceId,
}

/// Per-rank accounting, serializable so TCP ranks can report through part
/// files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankSummary {
    pub rank: u32,
    pub messages_sent: u64,
    pub messages_received: u64,
    pub bytes_copied: u64,
    pub copy_ops: u64,
    pub worker_busy_ns: Vec<u64>,
    pub phase_total_ns: [u64; 6],
}

/// Everything one rank produces.
#[derive(Debug, Clone)]
pub struct RankArtifacts {
    pub sub: Subdomain,
    pub summary: RankSummary,
    pub events: Vec<TraceEvent>,
    /// Interior cells, X-fastest, little-endian.
    pub interior: Vec<u8>,
}

/// Everything a whole run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub snapshot: Snapshot,
    pub events: Vec<TraceEvent>,
    pub summaries: Vec<RankSummary>,
    pub wall: Duration,
}

impl RunArtifacts {
    pub fn total_bytes_copied(&self) -> u64 {
        self.summaries.iter().map(|s| s.bytes_copied).sum()
    }

    /// Pooled busy-time imbalance across every worker of every rank.
    pub fn imbalance(&self) -> Option<f64> {
        let busy: Vec<Duration> = self
            .summaries
            .iter()
            .flat_map(|s| s.worker_busy_ns.iter().map(|&ns| Duration::from_nanos(ns)))
            .collect();
        imbalance_from_busy(&busy).ok()
    }

    /// Mean over ranks of one phase's accumulated time.
    pub fn phase_mean(&self, phase: usize) -> Duration {
        if self.summaries.is_empty() {
            return Duration::ZERO;
        }
        let total: Duration = self
            .summaries
            .iter()
            .map(|s| Duration::from_nanos(s.phase_total_ns[phase]))
            .sum();
        total / self.summaries.len() as u32
    }

    pub fn phase_max(&self, phase: usize) -> Duration {
        self.summaries
            .iter()
            .map(|s| Duration::from_nanos(s.phase_total_ns[phase]))
            .max()
            .unwrap_or(Duration::ZERO)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Synthesize this rank's slab of the velocity model. Values depend only
/// on global cell coordinates (and the seed), so every decomposition sees
/// bitwise-identical physics.
pub fn build_velocity<T: Value>(cfg: &RunConfig, sub: &Subdomain) -> Field3<T> {
    let ext = Extents {
        nx: sub.lx,
        ny: sub.ly,
        nz: sub.lz,
    };
    let halo = Halo {
        hx: sub.hx,
        hy: sub.hy,
        hz: cfg.radii.rz,
    };
    let mut field = Field3::zeroed(ext, halo);
    let (nx, ny, nz) = (cfg.grid.nx, cfg.grid.ny, cfg.grid.nz);
    for z in 0..sub.lz {
        for y in 0..sub.ly {
            for x in 0..sub.lx {
                let (gx, gy, gz) = (sub.ox + x, sub.oy + y, sub.oz + z);
                let v = match cfg.velocity_model {
                    VelocityModel::Constant => cfg.v0,
                    VelocityModel::GradientZ => {
                        cfg.v0 + (cfg.v1 - cfg.v0) * ((gz as f64 + 0.5) / nz as f64)
                    }
                    VelocityModel::Random => {
                        let cell = (gz * ny + gy) * nx + gx;
                        let h = splitmix64(cfg.seed ^ cell as u64);
                        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
                        cfg.v0 + (cfg.v1 - cfg.v0) * u
                    }
                };
                field.set(x as isize, y as isize, z as isize, T::from_f64(v));
            }
        }
    }
    field
}

fn poke_ghost<T: Value>(field: &mut Field3<T>, face: FaceId) {
    let e = field.extents();
    let (cx, cy, cz) = (
        e.nx as isize / 2,
        e.ny as isize / 2,
        e.nz as isize / 2,
    );
    let (x, y) = match face {
        FaceId::XLow => (-1, cy),
        FaceId::XHigh => (e.nx as isize, cy),
        FaceId::YLow => (cx, -1),
        FaceId::YHigh => (cx, e.ny as isize),
    };
    field.add(x, y, cz, T::from_f64(1.0));
}

fn interior_bytes<T: Value>(field: &Field3<T>) -> Vec<u8> {
    let e = field.extents();
    let mut out = Vec::with_capacity(e.cells() * T::BYTES);
    for z in 0..e.nz as isize {
        for y in 0..e.ny as isize {
            for x in 0..e.nx as isize {
                field.get(x, y, z).write_le(&mut out);
            }
        }
    }
    out
}

/// Run one rank's whole propagation over an already-connected transport.
pub fn run_rank<T: Value>(
    cfg: &RunConfig,
    sub: Subdomain,
    transport: Box<dyn Transport>,
    epoch: Epoch,
    corrupt: Option<CorruptGhost>,
) -> Result<RankArtifacts> {
    let neighbors = neighbors_of(&sub, &cfg.decomp);
    let spec = StencilSpec::from_radii(cfg.radii, cfg.grid.dx)?;
    let dt = cfg.dt_resolved()?;
    let velocity = build_velocity::<T>(cfg, &sub);
    let mut state = WavefieldState::new(velocity, dt)?;
    let pool = WorkerPool::new(cfg.threads)?;
    let exchanger = Exchanger::new(
        cfg.strategy,
        transport,
        neighbors.clone(),
        epoch,
        cfg.threads as u32 + 1,
    );
    let opts = StepOptions {
        policy: cfg.policy,
        order: cfg.order,
        view_mode: cfg.view_mode,
        interior_pad: cfg.interior_pad,
    };
    let mut pipe = RankPipeline::new(
        sub,
        neighbors,
        &spec,
        opts,
        exchanger,
        pool,
        epoch,
        cfg.tile_y,
        cfg.tile_z,
    )?;
    let placement = SourcePlacement::locate(&sub, cfg.source.cell);
    for _ in 0..cfg.steps {
        if let Some(c) = corrupt {
            if c.rank == sub.rank && c.step == state.step {
                poke_ghost(&mut state.p_curr, c.face);
            }
        }
        inject_source(&mut state, &cfg.source, &placement);
        pipe.run_time_step(&mut state)?;
    }
    let interior = interior_bytes(&state.p_curr);
    let report = pipe.finish()?;
    Ok(RankArtifacts {
        sub,
        summary: RankSummary {
            rank: sub.rank,
            messages_sent: report.messages_sent,
            messages_received: report.messages_received,
            bytes_copied: report.bytes_copied,
            copy_ops: report.copy_ops,
            worker_busy_ns: report
                .worker_busy
                .iter()
                .map(|d| d.as_nanos() as u64)
                .collect(),
            phase_total_ns: std::array::from_fn(|i| {
                report.phase_totals[i].as_nanos() as u64
            }),
        },
        events: report.events,
        interior,
    })
}

/// Stitch per-rank interiors into the global snapshot.
pub fn assemble_snapshot(
    ext: Extents,
    elem_bytes: usize,
    parts: &[(Subdomain, Vec<u8>)],
) -> Result<Snapshot> {
    let mut data = vec![0u8; ext.cells() * elem_bytes];
    for (sub, bytes) in parts {
        if bytes.len() != sub.cells() * elem_bytes {
            return Err(Error::Protocol(format!(
                "rank {} interior holds {} bytes, expected {}",
                sub.rank,
                bytes.len(),
                sub.cells() * elem_bytes
            )));
        }
        let row = sub.lx * elem_bytes;
        for z in 0..sub.lz {
            for y in 0..sub.ly {
                let src = (z * sub.ly + y) * row;
                let dst =
                    (((sub.oz + z) * ext.ny + (sub.oy + y)) * ext.nx + sub.ox) * elem_bytes;
                data[dst..dst + row].copy_from_slice(&bytes[src..src + row]);
            }
        }
    }
    Ok(Snapshot {
        ext,
        elem_bytes,
        data,
    })
}

pub(crate) fn merge_artifacts(
    ext: Extents,
    elem_bytes: usize,
    mut ranks: Vec<RankArtifacts>,
    wall: Duration,
) -> Result<RunArtifacts> {
    ranks.sort_by_key(|a| a.sub.rank);
    let parts: Vec<(Subdomain, Vec<u8>)> = ranks
        .iter()
        .map(|a| (a.sub, a.interior.clone()))
        .collect();
    let snapshot = assemble_snapshot(ext, elem_bytes, &parts)?;
    let mut events = Vec::new();
    let mut summaries = Vec::new();
    for artifact in ranks {
        events.extend(artifact.events);
        summaries.push(artifact.summary);
    }
    events.sort_by_key(|e| (e.rank, e.start_ns, e.tid));
    Ok(RunArtifacts {
        snapshot,
        events,
        summaries,
        wall,
    })
}

fn run_local_typed<T: Value>(
    cfg: &RunConfig,
    corrupt: Option<CorruptGhost>,
) -> Result<RunArtifacts> {
    let t0 = Instant::now();
    let subs = decompose(&cfg.grid, &cfg.decomp, cfg.radii)?;
    let epoch = Epoch::now();
    let endpoints = InProcRegistry::endpoints(subs.len() as u32, cfg.latency);
    let slots: Mutex<Vec<(u32, Result<RankArtifacts>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for (sub, endpoint) in subs.into_iter().zip(endpoints) {
            let slots = &slots;
            scope.spawn(move || {
                let outcome = run_rank::<T>(cfg, sub, Box::new(endpoint), epoch, corrupt);
                slots.lock().unwrap().push((sub.rank, outcome));
            });
        }
    });
    let mut outcomes = slots.into_inner().unwrap();
    outcomes.sort_by_key(|(rank, _)| *rank);
    let mut ranks = Vec::with_capacity(outcomes.len());
    for (_, outcome) in outcomes {
        ranks.push(outcome?);
    }
    let ext = Extents {
        nx: cfg.grid.nx,
        ny: cfg.grid.ny,
        nz: cfg.grid.nz,
    };
    merge_artifacts(ext, T::BYTES, ranks, t0.elapsed())
}

/// Run every rank as a thread of this process.
pub fn run_local(cfg: &RunConfig) -> Result<RunArtifacts> {
    run_local_with(cfg, None)
}

/// [`run_local`] plus the ghost-corruption test hook.
pub fn run_local_with(cfg: &RunConfig, corrupt: Option<CorruptGhost>) -> Result<RunArtifacts> {
    match cfg.value_type {
        ValueType::F32 => run_local_typed::<f32>(cfg, corrupt),
        ValueType::F64 => run_local_typed::<f64>(cfg, corrupt),
    }
}

/// Outcome of comparing a distributed run against its serial twin.
#[derive(Debug, Clone, Copy)]
pub struct VerifyReport {
    pub max_abs_diff: f64,
    pub bitwise_equal: bool,
}

/// The serial twin of `cfg`: one rank, one thread, baseline axes.
pub fn serial_reference(cfg: &RunConfig) -> RunConfig {
    let mut serial = cfg.clone();
    serial.decomp = Decomposition { px: 1, py: 1 };
    serial.threads = 1;
    serial.policy = SchedulePolicy::Static;
    serial.strategy = crate::halo::exchange::ExchangeStrategy::BlockingSequential;
    serial.view_mode = crate::perf::view::ViewMode::Alias;
    serial.order = LoopOrder::Zyx;
    serial.transport = TransportKind::InProcess;
    serial.latency = Duration::ZERO;
    serial.interior_pad = Duration::ZERO;
    serial
}

/// Run `cfg` (in-process) and its serial twin, and compare final fields.
pub fn verify_against_serial(cfg: &RunConfig) -> Result<VerifyReport> {
    verify_against_serial_with(cfg, None)
}

/// [`verify_against_serial`] plus the ghost-corruption test hook applied
/// to the distributed side only.
pub fn verify_against_serial_with(
    cfg: &RunConfig,
    corrupt: Option<CorruptGhost>,
) -> Result<VerifyReport> {
    let mut inproc = cfg.clone();
    inproc.transport = TransportKind::InProcess;
    let distributed = run_local_with(&inproc, corrupt)?;
    let serial = run_local(&serial_reference(cfg))?;
    Ok(VerifyReport {
        max_abs_diff: distributed.snapshot.max_abs_diff(&serial.snapshot)?,
        bitwise_equal: distributed.snapshot.bitwise_equal(&serial.snapshot),
    })
}

/// One CSV row per phase plus a Total row, for a single run.
pub fn single_run_rows(cfg: &RunConfig, artifacts: &RunArtifacts) -> Vec<ReportRow> {
    let variant = format!(
        "{}x{}/{}/{}/{}/{}",
        cfg.decomp.px, cfg.decomp.py, cfg.policy, cfg.order, cfg.strategy, cfg.view_mode
    );
    let mut rows = Vec::with_capacity(7);
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    for phase in crate::wavefield::PhaseId::ALL {
        rows.push(ReportRow {
            variant: variant.clone(),
            decomp: format!("{}x{}", cfg.decomp.px, cfg.decomp.py),
            schedule: cfg.policy.to_string(),
            order: cfg.order.to_string(),
            strategy: cfg.strategy.to_string(),
            view: cfg.view_mode.to_string(),
            phase: phase.name().to_string(),
            mean_ms: ms(artifacts.phase_mean(phase.index())),
            max_ms: ms(artifacts.phase_max(phase.index())),
            imbalance: None,
            bytes_copied: None,
            cache_misses: None,
            total_wall_ms: None,
            improvement_vs_baseline: None,
        });
    }
    rows.push(ReportRow {
        variant,
        decomp: format!("{}x{}", cfg.decomp.px, cfg.decomp.py),
        schedule: cfg.policy.to_string(),
        order: cfg.order.to_string(),
        strategy: cfg.strategy.to_string(),
        view: cfg.view_mode.to_string(),
        phase: "Total".to_string(),
        mean_ms: ms(artifacts.wall),
        max_ms: ms(artifacts.wall),
        imbalance: artifacts.imbalance(),
        bytes_copied: Some(artifacts.total_bytes_copied()),
        cache_misses: None,
        total_wall_ms: Some(ms(artifacts.wall)),
        improvement_vs_baseline: None,
    });
    rows
}

/// Write whichever of trace, CSV, and snapshot the config asks for.
pub fn write_run_outputs(cfg: &RunConfig, artifacts: &RunArtifacts) -> Result<()> {
    if let Some(path) = &cfg.trace_path {
        crate::perf::trace::emit_trace(&artifacts.events, path)?;
    }
    if let Some(path) = &cfg.csv_path {
        crate::perf::report::emit_report(&single_run_rows(cfg, artifacts), path)?;
    }
    if let Some(path) = &cfg.snapshot_path {
        artifacts.snapshot.write(path)?;
    }
    Ok(())
}
