//! rgmem: a self-evolving long-term memory engine for conversational agents.
//!
//! Raw dialogue is coarse-grained into episodic units, organized into a
//! three-tier knowledge graph, and evolved into multi-scale user-profile
//! theories by threshold-gated operators. Queries probe every scale at once
//! and assemble a single context document.

pub mod backend;
pub mod config;
pub mod error;
pub mod extract;
pub mod hash;
pub mod index;
pub mod ingest;
pub mod store;

pub use error::{Error, Result};
