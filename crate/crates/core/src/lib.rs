//! Search-and-train engine for dialogue strategy selection.
//!
//! Builds MCTS trajectory trees over discrete supporter-strategy decisions in
//! simulated multi-turn dialogues, trains a strategy policy and value model
//! with a subpath flow-balance objective plus margin-ranked edge preferences,
//! and performs value-guided strategy inference. A brute-force oracle verifies
//! flow-consistency and distribution-matching guarantees on enumerable
//! instances.

pub mod corpus;
pub mod env;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod search;
pub mod training;
