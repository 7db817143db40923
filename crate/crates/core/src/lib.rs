//! Decision-support product search: a planner turns a query into a task
//! graph, an executor runs catalog, web and tool retrieval over it, a guider
//! proposes facets and follow-up queries, and a decider ranks candidates on a
//! gated multi-criteria utility with a citation-checked rationale.

pub mod catalog;
pub mod clock;
pub mod constraint;
pub mod decider;
pub mod engine;
pub mod eval;
pub mod executor;
pub mod guider;
pub mod memory;
pub mod planner;
pub mod text;
