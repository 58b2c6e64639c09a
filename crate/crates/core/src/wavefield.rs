//! Acoustic wave propagation through the six-phase time step.
//!
//! Each step computes pNext = 2·pCurr − pPrev + (v·dt)²·∇²pCurr into the
//! pPrev block (in-place leapfrog rotation) and then swaps roles. The work
//! is split so communication can overlap computation:
//!
//! 1. HaloCompute: stencil+update on the interior strips adjacent to
//!    neighbored faces, so their results can ship immediately.
//! 2. Pack: copy those freshly computed face slabs into messages.
//! 3. PostComm: hand the messages to the exchange strategy.
//! 4. InteriorCompute: stencil+update on the tiled interior remainder.
//! 5. WaitComm: complete the receives.
//! 6. UnpackInterp: write received slabs into ghost cells (the
//!    interpolation hook is an identity pass with a timing probe).
//!
//! Ghost cells therefore always hold the neighbor's freshly computed
//! values when the next step begins, and every interior cell is written by
//! exactly one phase of exactly one worker, which keeps results bitwise
//! identical across decompositions, schedules, strategies, loop orders,
//! thread counts, and view modes.

use std::sync::Mutex;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::field::{Extents, Field3, Halo, SharedField};
use crate::grid::{tile_region, GlobalGrid, Subdomain};
use crate::halo::exchange::Exchanger;
use crate::halo::{pack_halo, unpack_halo_shared, FaceId, HaloMessage};
use crate::perf::trace::{Epoch, TraceBuffer, TraceEvent};
use crate::perf::view::{acquire_view, CopyCounter, ViewMode};
use crate::schedule::{SchedulePolicy, WorkerPool, WorkerStats};
use crate::stencil::{apply_stencil_shared, fd_weights, Box3, KernelCoeffs, LoopOrder, StencilSpec};
use crate::value::Value;

/// The six phases of one time step, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseId {
    HaloCompute,
    Pack,
    PostComm,
    InteriorCompute,
    WaitComm,
    UnpackInterp,
}

impl PhaseId {
    pub const ALL: [PhaseId; 6] = [
        PhaseId::HaloCompute,
        PhaseId::Pack,
        PhaseId::PostComm,
        PhaseId::InteriorCompute,
        PhaseId::WaitComm,
        PhaseId::UnpackInterp,
    ];

    pub fn index(self) -> usize {
        match self {
            PhaseId::HaloCompute => 0,
            PhaseId::Pack => 1,
            PhaseId::PostComm => 2,
            PhaseId::InteriorCompute => 3,
            PhaseId::WaitComm => 4,
            PhaseId::UnpackInterp => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PhaseId::HaloCompute => "HaloCompute",
            PhaseId::Pack => "Pack",
            PhaseId::PostComm => "PostComm",
            PhaseId::InteriorCompute => "InteriorCompute",
            PhaseId::WaitComm => "WaitComm",
            PhaseId::UnpackInterp => "UnpackInterp",
        }
    }
}

impl std::fmt::Display for PhaseId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ricker wavelet: (1 − 2π²f²t²)·exp(−π²f²t²).
pub fn ricker(t: f64, f: f64) -> f64 {
    let a = std::f64::consts::PI * f * t;
    let a2 = a * a;
    (1.0 - 2.0 * a2) * (-a2).exp()
}

/// Point source injected additively into pCurr each step.
#[derive(Debug, Clone, Copy)]
pub struct SourceSpec {
    /// Global grid cell receiving the injection.
    pub cell: (usize, usize, usize),
    pub frequency: f64,
    pub amplitude: f64,
    pub delay: f64,
}

impl SourceSpec {
    pub fn validate(&self, grid: &GlobalGrid) -> Result<()> {
        if self.frequency <= 0.0 {
            return Err(Error::Config(format!(
                "source frequency must be positive, got {}",
                self.frequency
            )));
        }
        let (x, y, z) = self.cell;
        if x >= grid.nx || y >= grid.ny || z >= grid.nz {
            return Err(Error::Config(format!(
                "source cell ({x}, {y}, {z}) is outside the {}x{}x{} grid",
                grid.nx, grid.ny, grid.nz
            )));
        }
        Ok(())
    }

    /// Injection amplitude at simulation time `t`.
    pub fn value_at(&self, t: f64) -> f64 {
        self.amplitude * ricker(t - self.delay, self.frequency)
    }
}

/// Conservative stability bound: dt ≤ dx·√(1/(vmax²·S)) with S the sum of
/// positive stencil coefficients at unit spacing over all three axes.
pub fn cfl_dt_bound(
    radii: crate::stencil::Radii,
    dx: f64,
    vmax: f64,
) -> Result<f64> {
    if dx <= 0.0 || vmax <= 0.0 {
        return Err(Error::Config(format!(
            "CFL bound needs positive spacing and velocity, got dx={dx}, vmax={vmax}"
        )));
    }
    let mut s = 0.0;
    for r in [radii.rx, radii.ry, radii.rz] {
        s += fd_weights(r, 1.0)?
            .into_iter()
            .filter(|w| *w > 0.0)
            .sum::<f64>();
    }
    Ok(dx * (1.0 / (vmax * vmax * s)).sqrt())
}

/// Pressure state of one rank: previous and current wavefields, velocity
/// model, and a laplacian scratch block, all sharing one geometry.
pub struct WavefieldState<T: Value> {
    pub p_prev: Field3<T>,
    pub p_curr: Field3<T>,
    pub velocity: Field3<T>,
    /// Stencil output scratch, written tile-by-tile each step.
    pub lap: Field3<T>,
    pub dt: f64,
    dt_t: T,
    pub step: u64,
}

impl<T: Value> WavefieldState<T> {
    /// Zeroed pressure blocks around the given velocity model.
    pub fn new(velocity: Field3<T>, dt: f64) -> Result<WavefieldState<T>> {
        if dt <= 0.0 {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        let ext = velocity.extents();
        let halo = velocity.halo();
        Ok(WavefieldState {
            p_prev: Field3::zeroed(ext, halo),
            p_curr: Field3::zeroed(ext, halo),
            velocity,
            lap: Field3::zeroed(ext, halo),
            dt,
            dt_t: T::from_f64(dt),
            step: 0,
        })
    }

    pub fn extents(&self) -> Extents {
        self.p_curr.extents()
    }

    pub fn halo(&self) -> Halo {
        self.p_curr.halo()
    }

    pub fn dt_value(&self) -> T {
        self.dt_t
    }

    /// Rotate pNext (held in the pPrev block) into pCurr.
    pub fn swap(&mut self) {
        std::mem::swap(&mut self.p_prev, &mut self.p_curr);
    }

    fn parts(&mut self) -> (&mut Field3<T>, &Field3<T>, &Field3<T>, &mut Field3<T>, T) {
        (
            &mut self.p_prev,
            &self.p_curr,
            &self.velocity,
            &mut self.lap,
            self.dt_t,
        )
    }
}

fn check_update_tile(ext: Extents, tile: Box3) -> Result<()> {
    if tile.x1 > ext.nx || tile.y1 > ext.ny || tile.z1 > ext.nz {
        return Err(Error::Bounds(format!(
            "tile [{},{})x[{},{})x[{},{}) exceeds interior {}x{}x{}",
            tile.x0, tile.x1, tile.y0, tile.y1, tile.z0, tile.z1, ext.nx, ext.ny, ext.nz
        )));
    }
    Ok(())
}

/// Leapfrog update over one tile: out = 2·curr − out + (vel·dt)²·lap, where
/// `out` is the pPrev block being rotated into pNext. The operation order
/// per cell is fixed; it is the determinism contract of the whole crate.
fn update_tile<T: Value>(
    curr: &Field3<T>,
    vel: &Field3<T>,
    lap: &SharedField<T>,
    out: &SharedField<T>,
    tile: Box3,
    order: LoopOrder,
    dt_t: T,
) {
    if tile.is_empty() {
        return;
    }
    let two = T::from_f64(2.0);
    let curr_ptr = curr.as_slice().as_ptr();
    let vel_ptr = vel.as_slice().as_ptr();
    let row = |y: usize, z: usize| {
        let base = curr.index(tile.x0 as isize, y as isize, z as isize);
        for dx in 0..tile.x1 - tile.x0 {
            let i = base + dx;
            // All four blocks share one linear map (checked at pipeline
            // construction), and tiles are disjoint across workers.
            unsafe {
                let c = *curr_ptr.add(i);
                let p = out.read_raw(i);
                let v = *vel_ptr.add(i);
                let l = lap.read_raw(i);
                let a = two * c;
                let b = a - p;
                let vd = v * dt_t;
                let s = vd * vd;
                out.write_raw(i, b + s * l);
            }
        }
    };
    match order {
        LoopOrder::Yzx => {
            for y in tile.y0..tile.y1 {
                for z in tile.z0..tile.z1 {
                    row(y, z);
                }
            }
        }
        LoopOrder::Zyx => {
            for z in tile.z0..tile.z1 {
                for y in tile.y0..tile.y1 {
                    row(y, z);
                }
            }
        }
    }
}

/// Apply the leapfrog update for `tile`, assuming `state.lap` already holds
/// the stencil result there. Writes pNext into the pPrev block.
pub fn step_update<T: Value>(state: &mut WavefieldState<T>, tile: Box3) -> Result<()> {
    check_update_tile(state.extents(), tile)?;
    let (p_prev, p_curr, velocity, lap, dt_t) = state.parts();
    let out = SharedField::new(p_prev);
    let lap_sh = SharedField::new(lap);
    update_tile(p_curr, velocity, &lap_sh, &out, tile, LoopOrder::Zyx, dt_t);
    Ok(())
}

/// Stencil into the laplacian block, then update, for one tile. Both the
/// strip and interior phases run exactly this sequence, so a cell's
/// arithmetic never depends on which phase computed it.
fn compute_tile<T: Value>(
    curr: &Field3<T>,
    vel: &Field3<T>,
    lap: &SharedField<T>,
    out: &SharedField<T>,
    tile: Box3,
    coeffs: &KernelCoeffs<T>,
    order: LoopOrder,
    dt_t: T,
) -> Result<()> {
    apply_stencil_shared(curr, lap, tile, coeffs, order)?;
    update_tile(curr, vel, lap, out, tile, order, dt_t);
    Ok(())
}

/// Disjoint write partition of a subdomain's interior: one strip per
/// neighbored face (covering at least the slab its neighbor needs), plus a
/// tiled remainder. Strips follow canonical face order. When the local
/// extent is thinner than two halo widths, the opposing strip is clamped so
/// regions never overlap; the pack slabs stay covered by the strip union.
pub fn partition_interior(
    sub: &Subdomain,
    neighbors: &[(FaceId, u32)],
    tile_y: usize,
    tile_z: usize,
) -> (Vec<(FaceId, Box3)>, Vec<Box3>) {
    let has = |f: FaceId| neighbors.iter().any(|&(face, _)| face == f);
    let (lx, ly, lz) = (sub.lx, sub.ly, sub.lz);
    let (hx, hy) = (sub.hx, sub.hy);
    let x_lo_end = if has(FaceId::XLow) { hx.min(lx) } else { 0 };
    let x_hi_start = if has(FaceId::XHigh) {
        lx.saturating_sub(hx).max(x_lo_end)
    } else {
        lx
    };
    let y_lo_end = if has(FaceId::YLow) { hy.min(ly) } else { 0 };
    let y_hi_start = if has(FaceId::YHigh) {
        ly.saturating_sub(hy).max(y_lo_end)
    } else {
        ly
    };
    let mut strips = Vec::new();
    if has(FaceId::XLow) {
        strips.push((
            FaceId::XLow,
            Box3 {
                x0: 0,
                x1: x_lo_end,
                y0: 0,
                y1: ly,
                z0: 0,
                z1: lz,
            },
        ));
    }
    if has(FaceId::XHigh) {
        strips.push((
            FaceId::XHigh,
            Box3 {
                x0: x_hi_start,
                x1: lx,
                y0: 0,
                y1: ly,
                z0: 0,
                z1: lz,
            },
        ));
    }
    if has(FaceId::YLow) {
        strips.push((
            FaceId::YLow,
            Box3 {
                x0: x_lo_end,
                x1: x_hi_start,
                y0: 0,
                y1: y_lo_end,
                z0: 0,
                z1: lz,
            },
        ));
    }
    if has(FaceId::YHigh) {
        strips.push((
            FaceId::YHigh,
            Box3 {
                x0: x_lo_end,
                x1: x_hi_start,
                y0: y_hi_start,
                y1: ly,
                z0: 0,
                z1: lz,
            },
        ));
    }
    let tiles = tile_region(y_lo_end, y_hi_start, 0, lz, tile_y, tile_z)
        .tiles
        .iter()
        .map(|t| Box3 {
            x0: x_lo_end,
            x1: x_hi_start,
            y0: t.y0,
            y1: t.y1,
            z0: t.z0,
            z1: t.z1,
        })
        .collect();
    (strips, tiles)
}

/// Where a global source cell lands on one rank: its own interior cell,
/// and any face-ghost copies of the neighbor-owned cell. Ghost copies
/// receive the same additive injection as the owner's interior cell, which
/// keeps ghosts bitwise coherent without an extra exchange (the slabs that
/// filled them were packed before this step's injection).
#[derive(Debug, Clone, Default)]
pub struct SourcePlacement {
    pub interior: Option<(isize, isize, isize)>,
    pub ghosts: Vec<(isize, isize, isize)>,
}

impl SourcePlacement {
    pub fn locate(sub: &Subdomain, cell: (usize, usize, usize)) -> SourcePlacement {
        let x = cell.0 as isize - sub.ox as isize;
        let y = cell.1 as isize - sub.oy as isize;
        let z = cell.2 as isize - sub.oz as isize;
        let (lx, ly, lz) = (sub.lx as isize, sub.ly as isize, sub.lz as isize);
        let (hx, hy) = (sub.hx as isize, sub.hy as isize);
        let in_x = (0..lx).contains(&x);
        let in_y = (0..ly).contains(&y);
        let in_z = (0..lz).contains(&z);
        let mut placement = SourcePlacement::default();
        if !in_z {
            return placement;
        }
        if in_x && in_y {
            placement.interior = Some((x, y, z));
        } else if in_y && ((-hx..0).contains(&x) || (lx..lx + hx).contains(&x)) {
            placement.ghosts.push((x, y, z));
        } else if in_x && ((-hy..0).contains(&y) || (ly..ly + hy).contains(&y)) {
            placement.ghosts.push((x, y, z));
        }
        placement
    }
}

/// Per-step knobs of the four optimization axes (the exchange strategy
/// lives in the exchanger itself).
#[derive(Debug, Clone, Copy)]
pub struct StepOptions {
    pub policy: SchedulePolicy,
    pub order: LoopOrder,
    pub view_mode: ViewMode,
    /// Artificial extra InteriorCompute time, for overlap experiments.
    pub interior_pad: Duration,
}

/// Everything a rank needs to drive time steps, persistent across steps.
pub struct RankPipeline<T: Value> {
    pub rank: u32,
    pub sub: Subdomain,
    neighbors: Vec<(FaceId, u32)>,
    strips: Vec<(FaceId, Box3)>,
    tiles: Vec<Box3>,
    coeffs: KernelCoeffs<T>,
    opts: StepOptions,
    exchanger: Exchanger<T>,
    pool: WorkerPool,
    epoch: Epoch,
    trace: TraceBuffer,
    counter: CopyCounter,
    /// Busy time per worker, compute phases only, summed over steps.
    worker_busy: Vec<Duration>,
    phase_totals: [Duration; 6],
}

/// End-of-run accounting extracted from a pipeline.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub events: Vec<TraceEvent>,
    pub messages_sent: u64,
    pub messages_received: u64,
    pub bytes_copied: u64,
    pub copy_ops: u64,
    pub worker_busy: Vec<Duration>,
    pub phase_totals: [Duration; 6],
}

impl<T: Value> RankPipeline<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sub: Subdomain,
        neighbors: Vec<(FaceId, u32)>,
        spec: &StencilSpec,
        opts: StepOptions,
        exchanger: Exchanger<T>,
        pool: WorkerPool,
        epoch: Epoch,
        tile_y: usize,
        tile_z: usize,
    ) -> Result<RankPipeline<T>> {
        if tile_y == 0 || tile_z == 0 {
            return Err(Error::Config("tile extents must be nonzero".into()));
        }
        let (strips, tiles) = partition_interior(&sub, &neighbors, tile_y, tile_z);
        debug_assert!(strips
            .iter()
            .zip(&neighbors)
            .all(|((sf, _), (nf, _))| sf == nf));
        let threads = pool.threads();
        Ok(RankPipeline {
            rank: sub.rank,
            sub,
            neighbors,
            strips,
            tiles,
            coeffs: KernelCoeffs::of(spec),
            opts,
            exchanger,
            pool,
            epoch,
            trace: TraceBuffer::new(),
            counter: CopyCounter::new(),
            worker_busy: vec![Duration::ZERO; threads],
            phase_totals: [Duration::ZERO; 6],
        })
    }

    pub fn copy_counter(&self) -> CopyCounter {
        self.counter.clone()
    }

    pub fn interior_tiles(&self) -> &[Box3] {
        &self.tiles
    }

    pub fn strips(&self) -> &[(FaceId, Box3)] {
        &self.strips
    }

    fn expected_slab_len(&self, face: FaceId) -> usize {
        match face {
            FaceId::XLow | FaceId::XHigh => self.sub.hx * self.sub.ly * self.sub.lz,
            FaceId::YLow | FaceId::YHigh => self.sub.lx * self.sub.hy * self.sub.lz,
        }
    }

    /// Run the six phases once, leaving pNext in pCurr (post-swap) and the
    /// step counter advanced.
    pub fn run_time_step(&mut self, state: &mut WavefieldState<T>) -> Result<()> {
        debug_assert_eq!(state.extents().nx, self.sub.lx);
        debug_assert_eq!(state.extents().ny, self.sub.ly);
        debug_assert_eq!(state.extents().nz, self.sub.lz);
        let step = state.step;
        let epoch = self.epoch;
        let rank = self.rank;
        let order = self.opts.order;
        let policy = self.opts.policy;
        let (hx, hy) = (self.sub.hx, self.sub.hy);
        let (p_prev, p_curr, velocity, lap, dt_t) = state.parts();
        let mut view = acquire_view(p_prev, self.opts.view_mode, &self.counter);

        let note_phase = |trace: &mut TraceBuffer,
                              worker_busy: &mut [Duration],
                              phase_totals: &mut [Duration; 6],
                              phase: PhaseId,
                              start: u64,
                              stats: Option<&WorkerStats>,
                              compute: bool| {
            let end = epoch.elapsed_ns();
            trace.record(rank, 0, phase.name(), start, end, Some(step));
            phase_totals[phase.index()] += Duration::from_nanos(end - start);
            if let Some(stats) = stats {
                for (w, envelope) in stats.envelopes.iter().enumerate() {
                    if let Some((s, e)) = envelope {
                        trace.record(rank, w as u32 + 1, phase.name(), *s, *e, Some(step));
                    }
                }
                if compute {
                    for (acc, busy) in worker_busy.iter_mut().zip(&stats.busy) {
                        *acc += *busy;
                    }
                }
            }
        };

        // Phase 1: strips next to neighbored faces, stencil + update.
        {
            let start = epoch.elapsed_ns();
            let out = SharedField::new(view.field_mut());
            let lap_sh = SharedField::new(lap);
            let strips = &self.strips;
            let coeffs = &self.coeffs;
            let stats = self.pool.execute_collapsed_loop(
                strips.len(),
                policy,
                epoch,
                |i| {
                    let tile = strips[i].1;
                    compute_tile(p_curr, velocity, &lap_sh, &out, tile, coeffs, order, dt_t)
                        .map_err(|e| e.to_string())?;
                    Ok(tile.cells() as u64)
                },
            )?;
            note_phase(
                &mut self.trace,
                &mut self.worker_busy,
                &mut self.phase_totals,
                PhaseId::HaloCompute,
                start,
                Some(&stats),
                true,
            );
        }

        // Phase 2: pack the freshly computed slabs, one face per worker.
        let outgoing = {
            let start = epoch.elapsed_ns();
            let slots: Vec<Mutex<Option<Vec<T>>>> =
                self.strips.iter().map(|_| Mutex::new(None)).collect();
            let packed = view.field();
            let strips = &self.strips;
            let stats = self.pool.execute_collapsed_loop(
                strips.len(),
                policy,
                epoch,
                |i| {
                    let face = strips[i].0;
                    let payload = pack_halo(packed, face, hx, hy).map_err(|e| e.to_string())?;
                    let cells = payload.len() as u64;
                    *slots[i].lock().unwrap() = Some(payload);
                    Ok(cells)
                },
            )?;
            let mut outgoing = Vec::with_capacity(self.neighbors.len());
            for ((face, peer), slot) in self.neighbors.iter().zip(slots) {
                outgoing.push(HaloMessage {
                    source: rank,
                    dest: *peer,
                    step,
                    face: face.opposite(),
                    payload: slot.into_inner().unwrap().expect("packed slab"),
                });
            }
            note_phase(
                &mut self.trace,
                &mut self.worker_busy,
                &mut self.phase_totals,
                PhaseId::Pack,
                start,
                Some(&stats),
                false,
            );
            outgoing
        };

        // Phase 3: hand the messages to the strategy.
        {
            let start = epoch.elapsed_ns();
            self.exchanger.post(outgoing, step)?;
            note_phase(
                &mut self.trace,
                &mut self.worker_busy,
                &mut self.phase_totals,
                PhaseId::PostComm,
                start,
                None,
                false,
            );
        }

        // Phase 4: tiled interior remainder.
        {
            let start = epoch.elapsed_ns();
            let out = SharedField::new(view.field_mut());
            let lap_sh = SharedField::new(lap);
            let tiles = &self.tiles;
            let coeffs = &self.coeffs;
            let stats = self.pool.execute_collapsed_loop(
                tiles.len(),
                policy,
                epoch,
                |i| {
                    let tile = tiles[i];
                    compute_tile(p_curr, velocity, &lap_sh, &out, tile, coeffs, order, dt_t)
                        .map_err(|e| e.to_string())?;
                    Ok(tile.cells() as u64)
                },
            )?;
            if !self.opts.interior_pad.is_zero() {
                std::thread::sleep(self.opts.interior_pad);
            }
            note_phase(
                &mut self.trace,
                &mut self.worker_busy,
                &mut self.phase_totals,
                PhaseId::InteriorCompute,
                start,
                Some(&stats),
                true,
            );
        }

        // Phase 5: complete the receives.
        let received = {
            let start = epoch.elapsed_ns();
            let received = self.exchanger.wait(step)?;
            for (face, payload) in &received {
                let expected = self.expected_slab_len(*face);
                if payload.len() != expected {
                    return Err(Error::Step {
                        rank,
                        face: Some(*face),
                        step,
                        message: format!(
                            "ghost slab holds {expected} values, payload has {}",
                            payload.len()
                        ),
                    });
                }
            }
            note_phase(
                &mut self.trace,
                &mut self.worker_busy,
                &mut self.phase_totals,
                PhaseId::WaitComm,
                start,
                None,
                false,
            );
            received
        };

        // Phase 6: ghosts of pNext, one face per worker; the interpolation
        // hook is an identity pass inside the same phase envelope.
        {
            let start = epoch.elapsed_ns();
            let out = SharedField::new(view.field_mut());
            let received = &received;
            let stats = self.pool.execute_collapsed_loop(
                received.len(),
                policy,
                epoch,
                |i| {
                    let (face, payload) = &received[i];
                    unpack_halo_shared(&out, *face, payload).map_err(|e| e.to_string())?;
                    Ok(payload.len() as u64)
                },
            )?;
            note_phase(
                &mut self.trace,
                &mut self.worker_busy,
                &mut self.phase_totals,
                PhaseId::UnpackInterp,
                start,
                Some(&stats),
                false,
            );
        }

        drop(view);
        state.swap();
        state.step += 1;
        #[cfg(debug_assertions)]
        {
            for &v in state.p_curr.as_slice() {
                debug_assert!(
                    Value::to_f64(v).is_finite(),
                    "rank {rank} produced a non-finite value at step {step}"
                );
            }
        }
        Ok(())
    }

    /// Shut down the exchanger, merge its events, and return the run's
    /// accounting.
    pub fn finish(mut self) -> Result<PipelineReport> {
        let (sent, received, comm_events) = self.exchanger.shutdown()?;
        self.trace.extend(comm_events);
        Ok(PipelineReport {
            events: self.trace.into_events(),
            messages_sent: sent,
            messages_received: received,
            bytes_copied: self.counter.bytes_copied(),
            copy_ops: self.counter.copy_ops(),
            worker_busy: self.worker_busy,
            phase_totals: self.phase_totals,
        })
    }
}

/// Add the source value for the current step time into pCurr: the owner
/// cell if this rank holds it, plus any face-ghost copies. Ghost copies
/// stay bitwise coherent with the owner because both sides add the same
/// value to the same pre-injection field.
pub fn inject_source<T: Value>(
    state: &mut WavefieldState<T>,
    source: &SourceSpec,
    placement: &SourcePlacement,
) {
    let v = T::from_f64(source.value_at(state.step as f64 * state.dt));
    if let Some((x, y, z)) = placement.interior {
        state.p_curr.add(x, y, z, v);
    }
    for &(x, y, z) in &placement.ghosts {
        state.p_curr.add(x, y, z, v);
    }
}

/// Inject the source (owner cell plus any face-ghost copies) and run
/// `n_steps` time steps.
pub fn propagate<T: Value>(
    state: &mut WavefieldState<T>,
    pipeline: &mut RankPipeline<T>,
    n_steps: u64,
    source: Option<&SourceSpec>,
) -> Result<()> {
    let placement = source.map(|s| SourcePlacement::locate(&pipeline.sub, s.cell));
    for _ in 0..n_steps {
        if let (Some(src), Some(place)) = (source, placement.as_ref()) {
            inject_source(state, src, place);
        }
        pipeline.run_time_step(state)?;
    }
    Ok(())
}

/// Zero-lag cross-correlation imaging condition:
/// image[p] += pSrc[p]·pRcv[p] over the interior.
pub fn image_accumulate<T: Value>(
    image: &mut Field3<T>,
    p_src: &Field3<T>,
    p_rcv: &Field3<T>,
) -> Result<()> {
    let ext = image.extents();
    if p_src.extents() != ext || p_rcv.extents() != ext {
        return Err(Error::Bounds(
            "image accumulation requires matching extents".into(),
        ));
    }
    for z in 0..ext.nz as isize {
        for y in 0..ext.ny as isize {
            for x in 0..ext.nx as isize {
                let m = p_src.get(x, y, z) * p_rcv.get(x, y, z);
                image.add(x, y, z, m);
            }
        }
    }
    Ok(())
}
