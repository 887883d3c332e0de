//! Wire formats exchanged with the three agents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{AbandonedIdea, RedactedRecord};

/// User payload for Agent 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryPayload {
    pub batch_id: String,
    pub records: Vec<RedactedRecord>,
}

/// Agent 1 response, enforced key-for-key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscoveryResponse {
    pub batch_id: String,
    pub features: Vec<DiscoveryFeature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscoveryFeature {
    pub feature_name: String,
    pub subgoal: String,
    pub causal_mechanism: String,
    pub definition: String,
    pub computation_logic: String,
    pub abandoned_ideas: Vec<AbandonedIdea>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeCandidate {
    pub feature_id: String,
    pub feature_name: String,
    pub definition: String,
    pub causal_mechanism: String,
}

/// User payload for Agent 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationPayload {
    pub features: Vec<MergeCandidate>,
}

/// One element of the Agent 2 response array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeDecision {
    pub merged_name: String,
    pub member_feature_ids: Vec<String>,
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBrief {
    pub feature_id: String,
    pub feature_name: String,
    pub definition: String,
}

/// User payload for Agent 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringPayload {
    pub features: Vec<FeatureBrief>,
    pub records: Vec<RedactedRecord>,
}

/// Agent 3 response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentsResponse {
    pub assignments: BTreeMap<String, Vec<String>>,
}
