//! Cycle-stepped simulator of an SMT out-of-order core whose pipeline
//! structures are partitioned between a network data-delivery thread and a
//! data-processing thread.

pub mod cache;
pub mod config;
pub mod daemon;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod op;
pub mod partition;
pub mod pipeline;
pub mod power;
pub mod scenario;
pub mod workload;

pub use config::{CoreConfig, Cycle, ThreadId};
pub use error::SimError;
pub use op::{MicroOp, OpClass, OpHook};
pub use partition::{PartitionScheme, RepartitionMode, SchemeLabel, StructureKind};
pub use pipeline::{Core, CycleEvents, Machine, Workload};
