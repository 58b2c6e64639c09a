//! One-process-per-rank execution over loopback TCP.
//!
//! Each rank process connects to its neighbors (rank 0 listens on the base
//! port, rank i on base+i), runs its propagation, and writes three part
//! files into a shared directory: the raw interior bytes, a JSON summary,
//! and its trace events. Whoever launched the ranks (the CLI's `--spawn`
//! mode, or an external script) then assembles the parts into the same
//! [`RunArtifacts`] an in-process run produces. Trace timestamps are
//! per-process; lanes are comparable, absolute times across ranks are not.

use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::field::Extents;
use crate::grid::decompose;
use crate::halo::transport::TcpTransport;
use crate::perf::trace::{Epoch, TraceEvent};
use crate::runtime::config::RunConfig;
use crate::runtime::exec::{
    merge_artifacts, run_rank, CorruptGhost, RankArtifacts, RankSummary, RunArtifacts,
};
use crate::value::ValueType;

/// How long a rank waits for all neighbor connections.
pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(30);

/// Run one rank of a TCP-distributed job in this process (or thread).
/// Blocks until the neighbors rendezvous.
pub fn run_tcp_rank(
    cfg: &RunConfig,
    rank: u32,
    corrupt: Option<CorruptGhost>,
) -> Result<RankArtifacts> {
    let subs = decompose(&cfg.grid, &cfg.decomp, cfg.radii)?;
    if rank as usize >= subs.len() {
        return Err(Error::Config(format!(
            "rank {rank} is out of range for the {}x{} decomposition ({} ranks)",
            cfg.decomp.px,
            cfg.decomp.py,
            subs.len()
        )));
    }
    let sub = subs[rank as usize];
    let neighbors = crate::grid::neighbors_of(&sub, &cfg.decomp);
    let peers: Vec<u32> = neighbors.iter().map(|&(_, peer)| peer).collect();
    let transport = TcpTransport::connect(
        rank,
        &peers,
        cfg.base_port,
        cfg.checksum(),
        CONNECT_TIMEOUT,
    )?;
    let epoch = Epoch::now();
    match cfg.value_type {
        ValueType::F32 => run_rank::<f32>(cfg, sub, Box::new(transport), epoch, corrupt),
        ValueType::F64 => run_rank::<f64>(cfg, sub, Box::new(transport), epoch, corrupt),
    }
}

fn part_path(dir: &Path, rank: u32, kind: &str) -> PathBuf {
    dir.join(format!("rank{rank}.{kind}"))
}

/// Persist one rank's results for later assembly.
pub fn write_rank_parts(dir: &Path, artifacts: &RankArtifacts) -> Result<()> {
    let rank = artifacts.summary.rank;
    std::fs::create_dir_all(dir)?;
    std::fs::write(part_path(dir, rank, "interior"), &artifacts.interior)?;
    let summary = serde_json::to_string(&artifacts.summary)
        .map_err(|e| Error::Protocol(format!("cannot encode rank summary: {e}")))?;
    std::fs::write(part_path(dir, rank, "summary.json"), summary)?;
    let events = serde_json::to_string(&artifacts.events)
        .map_err(|e| Error::Protocol(format!("cannot encode trace events: {e}")))?;
    std::fs::write(part_path(dir, rank, "events.json"), events)?;
    Ok(())
}

/// Assemble every rank's part files into whole-run artifacts. `wall` is
/// the launcher's measured wall time for the job.
pub fn collect_rank_parts(cfg: &RunConfig, dir: &Path, wall: Duration) -> Result<RunArtifacts> {
    let subs = decompose(&cfg.grid, &cfg.decomp, cfg.radii)?;
    let mut ranks = Vec::with_capacity(subs.len());
    for sub in subs {
        let rank = sub.rank;
        let interior = std::fs::read(part_path(dir, rank, "interior")).map_err(|e| {
            Error::Protocol(format!("missing interior part for rank {rank}: {e}"))
        })?;
        let summary_text = std::fs::read_to_string(part_path(dir, rank, "summary.json"))
            .map_err(|e| Error::Protocol(format!("missing summary part for rank {rank}: {e}")))?;
        let summary: RankSummary = serde_json::from_str(&summary_text)
            .map_err(|e| Error::Protocol(format!("bad summary part for rank {rank}: {e}")))?;
        if summary.rank != rank {
            return Err(Error::Protocol(format!(
                "summary part for rank {rank} reports rank {}",
                summary.rank
            )));
        }
        let events_text = std::fs::read_to_string(part_path(dir, rank, "events.json"))
            .map_err(|e| Error::Protocol(format!("missing events part for rank {rank}: {e}")))?;
        let events: Vec<TraceEvent> = serde_json::from_str(&events_text)
            .map_err(|e| Error::Protocol(format!("bad events part for rank {rank}: {e}")))?;
        ranks.push(RankArtifacts {
            sub,
            summary,
            events,
            interior,
        });
    }
    let ext = Extents {
        nx: cfg.grid.nx,
        ny: cfg.grid.ny,
        nz: cfg.grid.nz,
    };
    merge_artifacts(ext, cfg.value_type.bytes(), ranks, wall)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::config::resolve_config;
    use crate::runtime::exec::run_local;
    use std::sync::Mutex;
    use tempfile::tempdir;

    fn kv(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn tcp_cfg(base_port: &str) -> RunConfig {
        resolve_config(
            &[],
            &[],
            &kv(&[
                ("grid.nx", "20"),
                ("grid.ny", "12"),
                ("grid.nz", "6"),
                ("stencil.rx", "2"),
                ("stencil.ry", "2"),
                ("stencil.rz", "1"),
                ("run.steps", "5"),
                ("run.threads", "2"),
                ("tile.ty", "4"),
                ("tile.tz", "3"),
                ("decomp.px", "2"),
                ("decomp.py", "2"),
                ("comm.transport", "tcp"),
                ("comm.base_port", base_port),
            ]),
        )
        .unwrap()
    }

    #[test]
    fn out_of_range_rank_is_a_config_error() {
        let cfg = tcp_cfg("9931");
        let err = run_tcp_rank(&cfg, 4, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn tcp_ranks_match_the_in_process_run_bitwise() {
        let cfg = tcp_cfg("9941");
        let dir = tempdir().unwrap();
        let parts: Mutex<Vec<RankArtifacts>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for rank in 0..4u32 {
                let cfg = &cfg;
                let parts = &parts;
                scope.spawn(move || {
                    let artifacts = run_tcp_rank(cfg, rank, None).unwrap();
                    parts.lock().unwrap().push(artifacts);
                });
            }
        });
        for artifacts in parts.into_inner().unwrap() {
            write_rank_parts(dir.path(), &artifacts).unwrap();
        }
        let assembled =
            collect_rank_parts(&cfg, dir.path(), Duration::from_millis(1)).unwrap();

        let mut inproc = cfg.clone();
        inproc.transport = crate::runtime::config::TransportKind::InProcess;
        let reference = run_local(&inproc).unwrap();
        assert!(assembled.snapshot.bitwise_equal(&reference.snapshot));
        assert_eq!(assembled.summaries.len(), 4);
        let driver_events = assembled.events.iter().filter(|e| e.tid == 0).count();
        assert_eq!(driver_events, 4 * 6 * 5);
    }
}
