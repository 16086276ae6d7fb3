//! Anytime belief propagation for discrete factor graphs.
//!
//! Marginal inference runs on *sparse* variable domains that grow one value
//! at a time. Between growth steps the messages are driven to a fixed point of
//! the Bethe objective restricted to the instantiated values, using residual
//! (dynamic-range) scheduling. Interrupting the engine at any certified fixed
//! point yields locally consistent marginals; letting it run to completion
//! yields ordinary loopy BP marginals.
//!
//! The crate is `no_std` and only needs `alloc`. Time is abstracted behind
//! [`engine::Clock`] so the host decides whether runs are timed by a real
//! clock or by the deterministic work counter.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod engine;
pub mod growth;
pub mod heap;
pub mod logspace;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod propagation;
pub mod sparse_state;

pub use engine::{
    run, run_anytime, run_dense, Budget, Cadence, Clock, EngineConfig, Flow, Method, RunOutcome,
    Snapshot, SnapshotKind, WorkClock,
};
pub use growth::{DomainQueue, GrowthPolicy};
pub use heap::IndexedMaxHeap;
pub use model::{Factor, FactorGraph, FactorId, ModelError, VariableId};
pub use oracle::{exact_marginals, reference_marginals, ExactResult, OracleError};
pub use propagation::{ConvergenceReport, Propagator};
pub use sparse_state::{SparseDomain, SparseState, StateError};
