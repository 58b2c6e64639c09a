//! Performance instrumentation: phase tracing, buffer-view accounting,
//! and a cache model for comparing loop orders.

pub mod cache;
pub mod report;
pub mod trace;
pub mod view;
