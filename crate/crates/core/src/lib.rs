//! Explicit, per-code trust management.
//!
//! Every code unit carries a signed manifest, a trust level that evolves with
//! its execution history, and a verdict that decides whether and how it runs.
//! The [`engine::Engine`] ties the pieces together; the `examples/` directory
//! has one runnable program per capability.

pub mod algorithm;
pub mod analysis;
pub mod cli;
pub mod engine;
pub mod harness;
pub mod history;
pub mod integrity;
pub mod model;
pub mod registry;
pub mod scenarios;
pub mod store;

pub use algorithm::{compute_score, transition, AlgorithmParams, HistoryAggregate};
pub use engine::{Engine, EngineError, ExecutionReport};
pub use integrity::{canonical_hash, sign_manifest, verify_manifest, KeyPair, Manifest};
pub use model::{
    CodeUnit, Decision, ExecMode, ExecutionOutcome, Principal, TrustLevel, TrustRecord, Verdict,
};
pub use store::Store;
