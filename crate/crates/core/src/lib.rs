//! Deterministic simulation of a self-managing replicated database: table
//! replicas behind per-table managers, a replicated system table located
//! through locator servers, and the atomic commit and consensus protocols
//! they rely on.

pub mod model;
pub mod statements;
pub mod simnet;
pub mod commit;
pub mod paxos;
pub mod locator;
pub mod autonomics;
pub mod engine;
pub mod harness;
