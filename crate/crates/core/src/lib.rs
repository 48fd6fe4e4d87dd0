//! Trace-driven, cycle-approximate model of one GPU streaming multiprocessor's
//! L1 memory subsystem and warp scheduler. Warps that keep evicting each other
//! can be isolated into unused shared memory or throttled.

pub mod config;
pub mod engine;
pub mod l1d;
pub mod mshr;
pub mod scheduler;
pub mod smem;
pub mod stats;
pub mod trace_io;
pub mod types;
pub mod vta;
pub mod workloads;

pub use config::{block_index, default_config, ConfigError, Policy, SimConfig};
pub use engine::{run, run_matrix, run_with, RunOptions, SimError};
pub use stats::SimStats;
pub use types::{AccessKind, GlobalAddress, MemSpace, Trace, TraceRecord, WarpId};
