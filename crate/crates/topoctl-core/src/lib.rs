//! Incremental topology control for wireless sensor networks.
//!
//! The crate is organized around a mutable link-weighted digraph
//! ([`topology::Topology`]) whose links carry a classification state
//! (active / inactive / unclassified). On top of it sit:
//!
//! * [`pattern`] — graph patterns, injective matching, graph constraints
//!   and the consistency/connectivity checkers,
//! * [`rule`] — the topology-control and context-event rewrite rules,
//!   guarded by positive/negative application conditions,
//! * [`refine`] — the engine that derives those application conditions
//!   from the constraints by gluing enumeration and categorizes them,
//! * [`handler`] — restoration operations that keep the topology weakly
//!   consistent when unrestrictable rules (context events, link
//!   unclassification) fire, plus the termination-enforcing
//!   pre-processing step,
//! * [`ktc`] — the incremental and batch kTC algorithms and a brute-force
//!   classification oracle,
//! * [`sim`] — a deterministic discrete-time WSN simulator (placement,
//!   Gauss-Markov mobility, battery/traffic model, periodic TC runs),
//! * [`metrics`] — per-TC-run measurement records and CSV/JSON output.

pub mod handler;
pub mod ktc;
pub mod metrics;
pub mod pattern;
pub mod refine;
pub mod rule;
pub mod sim;
pub mod text;
pub mod topology;

pub use pattern::{GraphConstraint, GraphPattern, PatternMatch};
pub use topology::{ContextEvent, Link, LinkId, LinkState, NodeId, Topology};
