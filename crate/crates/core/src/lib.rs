//! Log-driven statistics paired with a formal firewall model.
//!
//! The statistical side turns flow logs into entity embeddings (skip-gram
//! with hierarchical softmax over schema-defined context/target pairs) and
//! clusters per-row vectors with K-means. The symbolic side compiles an
//! ordered first-match rule base into per-rule packet regions and answers
//! satisfiability queries with concrete witnesses and matched-rule traces.
//! [`query`] routes a single constraint language to either side.

mod binmat;
pub mod cluster;
pub mod embedding;
pub mod formal;
pub mod ingest;
pub mod parallel;
pub mod pipeline;
pub mod query;
pub mod store;
pub mod synth;

pub use parallel::ExecMode;
