//! Distributed reverse-time-migration mini-application and performance
//! laboratory.
//!
//! The crate propagates an acoustic wavefield on a 3D grid that is
//! decomposed across ranks along X and Y, with a high-order star stencil
//! whose halos are exchanged every time step. Each step runs a fixed
//! six-phase pipeline (halo compute, pack, post, interior compute, wait,
//! unpack), and four independent optimization axes can be toggled and
//! measured without changing the numerics:
//!
//! * buffer views: copied scratch blocks vs aliased views
//! * tile scheduling: static contiguous chunks vs dynamic claiming
//! * exchange strategy: blocking, posted, or a dedicated comm thread
//! * loop order: YZX vs ZYX traversal of each tile
//!
//! Every variant produces bitwise-identical wavefields; the differences
//! show up only in the performance instrumentation.

pub mod error;
pub mod field;
pub mod grid;
pub mod halo;
pub mod perf;
pub mod runtime;
pub mod schedule;
pub mod stencil;
pub mod value;
pub mod wavefield;

pub use error::{Error, Result};
pub use field::{Extents, Field3, Halo, SharedField};
pub use grid::{Decomposition, GlobalGrid, Subdomain, Tile, TileMap};
pub use halo::exchange::{ExchangeStrategy, Exchanger};
pub use halo::transport::{InProcEndpoint, InProcRegistry, TcpTransport, Transport};
pub use halo::{FaceId, HaloMessage};
pub use schedule::{SchedulePolicy, WorkerPool, WorkerStats};
pub use stencil::{fd_weights, plane_footprints, Box3, LoopOrder, Radii, StencilSpec};
pub use runtime::config::{
    parse_config, resolve_config, MatrixAxes, RunConfig, TransportKind, VelocityModel,
};
pub use runtime::exec::{
    run_local, run_local_with, serial_reference, single_run_rows, verify_against_serial,
    write_run_outputs, CorruptGhost, RankArtifacts, RunArtifacts, Snapshot, VerifyReport,
};
pub use runtime::matrix::{expand_matrix, run_matrix, run_matrix_with, VariantSpec};
pub use runtime::tcp::{collect_rank_parts, run_tcp_rank, write_rank_parts};
pub use value::{Value, ValueType};
pub use wavefield::{
    cfl_dt_bound, image_accumulate, propagate, ricker, step_update, PhaseId, PipelineReport,
    RankPipeline, SourceSpec, StepOptions, WavefieldState,
};
