//! Host-side companion to `abp-core`: UAI model files, a wall clock,
//! JSON-lines traces, cached reference marginals, benchmark sweeps and the
//! `abp` command-line tool.

pub mod cli;
pub mod clock;
pub mod reference;
pub mod sweep;
pub mod trace;
pub mod uai;

pub use abp_core;
pub use clock::SystemClock;
pub use trace::TraceRecord;
pub use uai::{parse_uai, serialize_uai, UaiError};
