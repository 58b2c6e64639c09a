//! Run orchestration: configuration, rank launch over either transport,
//! serial-equivalence verification, and the experiment matrix.

pub mod config;
pub mod exec;
pub mod matrix;
pub mod tcp;
