//! Feature discovery with LLM agents under cognitive or vanilla prompting,
//! and the deterministic metrics and held-out evaluation around it.
//!
//! Stages: [`agents`] discovers, consolidates and scores features through a
//! [`backend::Backend`]; [`metrics`] turns assignments into statistics;
//! [`evaluation`] freezes a feature set and applies it to held-out data;
//! [`pipeline`] chains everything with on-disk artifacts.

pub mod agents;
pub mod backend;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use backend::{AgentTranscript, Backend, CostLedger, PriceTable, ProviderKind};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use evaluation::{AuditReport, FrozenFeatureSet};
pub use metrics::{ComparisonReport, RunSummary};
pub use model::{
    AssignmentMatrix, AttrValue, Attributes, Condition, Dataset, DatasetRole, EntityRecord, FeatureSpec,
    FeatureStats, Outcome, PopulationCounts, RedactedRecord,
};
