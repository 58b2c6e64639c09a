//! Copy-vs-alias buffer views.
//!
//! A view exposes one pressure block to a time step. `Alias` hands out the
//! original storage. `Copy` duplicates the block into a scratch buffer on
//! acquire and writes the scratch back on release, counting the moved
//! bytes both ways; it models an abstraction layer that copies data when
//! handing buffers to compute phases. Computation through either mode is
//! bitwise identical, only the counter differs.
//!
//! Views are RAII handles: release happens when the handle drops, so a
//! release without a matching acquire cannot be expressed.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::Error;
use crate::field::Field3;
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewMode {
    Copy,
    Alias,
}

impl std::fmt::Display for ViewMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ViewMode::Copy => write!(f, "copy"),
            ViewMode::Alias => write!(f, "alias"),
        }
    }
}

impl std::str::FromStr for ViewMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "copy" => Ok(ViewMode::Copy),
            "alias" => Ok(ViewMode::Alias),
            other => Err(Error::Config(format!(
                "unknown view mode '{other}' (expected copy or alias)"
            ))),
        }
    }
}

/// Cumulative copy accounting, shared across a rank's run.
#[derive(Debug, Clone, Default)]
pub struct CopyCounter {
    bytes: Arc<AtomicU64>,
    ops: Arc<AtomicU64>,
}

impl CopyCounter {
    pub fn new() -> CopyCounter {
        CopyCounter::default()
    }

    pub fn bytes_copied(&self) -> u64 {
        self.bytes.load(Ordering::Relaxed)
    }

    pub fn copy_ops(&self) -> u64 {
        self.ops.load(Ordering::Relaxed)
    }

    fn count(&self, bytes: u64) {
        self.bytes.fetch_add(bytes, Ordering::Relaxed);
        self.ops.fetch_add(1, Ordering::Relaxed);
    }
}

/// A live view of one block. Dropping the handle releases the view,
/// writing scratch contents back in Copy mode.
pub struct ViewHandle<'a, T: Value> {
    original: &'a mut Field3<T>,
    /// Some in Copy mode until release.
    scratch: Option<Field3<T>>,
    counter: CopyCounter,
}

/// Expose `block` under `mode`. Copy mode counts the block's allocated
/// bytes (ghosts included) once here and once at release.
pub fn acquire_view<'a, T: Value>(
    block: &'a mut Field3<T>,
    mode: ViewMode,
    counter: &CopyCounter,
) -> ViewHandle<'a, T> {
    let scratch = match mode {
        ViewMode::Alias => None,
        ViewMode::Copy => {
            counter.count(block.allocated_bytes() as u64);
            Some(block.clone())
        }
    };
    ViewHandle {
        original: block,
        scratch,
        counter: counter.clone(),
    }
}

impl<'a, T: Value> ViewHandle<'a, T> {
    pub fn field(&self) -> &Field3<T> {
        self.scratch.as_ref().unwrap_or(self.original)
    }

    pub fn field_mut(&mut self) -> &mut Field3<T> {
        self.scratch.as_mut().unwrap_or(self.original)
    }

    /// Explicit release; equivalent to dropping the handle.
    pub fn release(self) {}
}

impl<'a, T: Value> Drop for ViewHandle<'a, T> {
    fn drop(&mut self) {
        if let Some(scratch) = self.scratch.take() {
            self.original.copy_from(&scratch);
            self.counter.count(self.original.allocated_bytes() as u64);
        }
    }
}
