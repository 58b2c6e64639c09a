//! Phase and region instrumentation, emitted as Chrome-trace JSON.
//!
//! Times are stored as nanoseconds since the run epoch and written in
//! microseconds, the unit trace viewers expect. `tid` is a logical lane, not
//! an OS thread id: lane 0 is the rank's phase driver, lanes 1..=T its
//! workers, lane T+1 the communication thread when one exists.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One complete-span event on a rank's logical lane.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub rank: u32,
    pub tid: u32,
    pub name: String,
    pub start_ns: u64,
    pub dur_ns: u64,
    pub step: Option<u64>,
}

/// Shared zero point for every timestamp in one run.
#[derive(Debug, Clone, Copy)]
pub struct Epoch(Instant);

impl Epoch {
    pub fn now() -> Self {
        Epoch(Instant::now())
    }

    pub fn elapsed_ns(&self) -> u64 {
        self.0.elapsed().as_nanos() as u64
    }
}

impl Default for Epoch {
    fn default() -> Self {
        Epoch::now()
    }
}

/// Append-only per-thread event buffer; buffers are merged at run end.
#[derive(Debug, Default)]
pub struct TraceBuffer {
    events: Vec<TraceEvent>,
}

impl TraceBuffer {
    pub fn new() -> Self {
        TraceBuffer { events: Vec::new() }
    }

    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn record(
        &mut self,
        rank: u32,
        tid: u32,
        name: &str,
        start_ns: u64,
        end_ns: u64,
        step: Option<u64>,
    ) {
        self.events.push(TraceEvent {
            rank,
            tid,
            name: name.to_string(),
            start_ns,
            dur_ns: end_ns.saturating_sub(start_ns),
            step,
        });
    }

    pub fn extend(&mut self, events: Vec<TraceEvent>) {
        self.events.extend(events);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }
}

/// Render events as a Chrome-trace JSON object: `{"traceEvents": [...]}`
/// with complete ("ph": "X") events, microsecond ts/dur, pid = rank,
/// tid = logical lane.
pub fn trace_json(events: &[TraceEvent]) -> String {
    let rows: Vec<serde_json::Value> = events
        .iter()
        .map(|e| {
            let mut row = serde_json::json!({
                "name": e.name,
                "ph": "X",
                "ts": e.start_ns as f64 / 1000.0,
                "dur": e.dur_ns as f64 / 1000.0,
                "pid": e.rank,
                "tid": e.tid,
            });
            if let Some(step) = e.step {
                row["args"] = serde_json::json!({ "step": step });
            }
            row
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({ "traceEvents": rows })).unwrap()
}

/// Write events to `path` in Chrome trace format.
pub fn emit_trace(events: &[TraceEvent], path: &std::path::Path) -> Result<()> {
    std::fs::write(path, trace_json(events))?;
    Ok(())
}
