//! Compiler pipeline for block-code (Bravyi-Haah) magic-state distillation
//! factories on a 2-D surface-code tile mesh.
//!
//! The crate is organised the way a factory moves through the pipeline:
//!
//! - [`protocol`]: circuit synthesis for single modules and multi-level
//!   factories, plus the analytic error / yield / area model.
//! - [`igraph`]: interaction graphs, ASAP timestep layers, critical path and
//!   community structure.
//! - [`layout`]: grid placements, congestion metrics and baseline mappings.
//! - [`anneal`]: force-directed annealing of a placement.
//! - [`bisect`]: multilevel recursive bisection and grid embedding.
//! - [`stitch`]: hierarchical stitching of per-round embeddings.
//! - [`meshsim`]: cycle-accurate braid scheduling and routing.
//! - [`harness`]: experiment sweeps, correlation studies and report emission.

pub mod anneal;
pub mod bisect;
pub mod error;
pub mod harness;
pub mod igraph;
pub mod layout;
pub mod meshsim;
pub mod protocol;
pub mod stitch;

pub use error::{Error, Result};
pub use layout::{Cell, GridMapping};
pub use protocol::{Circuit, FactoryConfig, Gate, GateKind, QubitId, QubitRef, QubitRole, ReusePolicy};
