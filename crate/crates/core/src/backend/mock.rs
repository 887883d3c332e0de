//! Deterministic rule-based provider and a scripted provider for tests.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{schema, Backend, CompletionRequest, PriceTable, Provider, ProviderKind, RawCompletion};
use crate::agents::payload::{
    AssignmentsResponse, ConsolidationPayload, DiscoveryFeature, DiscoveryPayload, DiscoveryResponse,
    MergeDecision, ScoringPayload,
};
use crate::error::{Error, Result};
use crate::model::{slugify, AbandonedIdea};

/// Emits one feature when `trigger` occurs in any record of a discovery batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryRule {
    pub trigger: String,
    pub feature_name: String,
    #[serde(default = "default_subgoal")]
    pub subgoal: String,
    #[serde(default)]
    pub causal_mechanism: String,
    #[serde(default)]
    pub definition: String,
    #[serde(default)]
    pub computation_logic: String,
    #[serde(default)]
    pub abandoned_ideas: Vec<AbandonedIdea>,
}

fn default_subgoal() -> String {
    "founder capability formation".into()
}

/// Proposes a merge when every member is present in a consolidation batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRule {
    pub merged_name: String,
    pub member_feature_ids: Vec<String>,
    #[serde(default)]
    pub justification: String,
}

/// Tags an entity with `feature_id` when any trigger occurs in its attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringRule {
    pub feature_id: String,
    pub triggers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Rulebook {
    #[serde(default)]
    pub discovery: Vec<DiscoveryRule>,
    #[serde(default)]
    pub merges: Vec<MergeRule>,
    #[serde(default)]
    pub scoring: Vec<ScoringRule>,
}

impl Rulebook {
    /// Adds scoring rules (feature slug -> trigger) for every discovery rule
    /// that has none yet.
    pub fn with_default_scoring(mut self) -> Self {
        let mut have: BTreeSet<String> = self.scoring.iter().map(|r| r.feature_id.clone()).collect();
        for rule in &self.discovery {
            let id = slugify(&rule.feature_name);
            if have.insert(id.clone()) {
                self.scoring.push(ScoringRule {
                    feature_id: id,
                    triggers: vec![rule.trigger.clone()],
                });
            }
        }
        self
    }

    /// Adds merge rules for discovery rules sharing a trigger token, in groups
    /// of at most five, named after the first rule of each group. Scoring rules
    /// for the merged slug are added too.
    pub fn with_shared_trigger_merges(mut self) -> Self {
        let mut groups: Vec<(String, Vec<&DiscoveryRule>)> = Vec::new();
        for rule in &self.discovery {
            let trigger = rule.trigger.to_lowercase();
            match groups.iter_mut().find(|(t, _)| *t == trigger) {
                Some((_, members)) => members.push(rule),
                None => groups.push((trigger, vec![rule])),
            }
        }
        let mut merges = Vec::new();
        let mut scoring = Vec::new();
        for (trigger, members) in groups {
            let mut ids: Vec<String> = Vec::new();
            for m in &members {
                let id = slugify(&m.feature_name);
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
            for chunk in ids.chunks(5).filter(|c| c.len() >= 2) {
                let merged_name = format!("{} merged", chunk[0]);
                scoring.push(ScoringRule {
                    feature_id: slugify(&merged_name),
                    triggers: vec![trigger.clone()],
                });
                merges.push(MergeRule {
                    merged_name,
                    member_feature_ids: chunk.to_vec(),
                    justification: format!("members fire on the same marker `{trigger}`"),
                });
            }
        }
        self.merges.extend(merges);
        self.scoring.extend(scoring);
        self
    }
}

/// First JSON value of a payload; corrective re-prompts append free text.
fn leading_json<T: DeserializeOwned>(payload: &str) -> Result<T> {
    serde_json::Deserializer::from_str(payload)
        .into_iter::<T>()
        .next()
        .ok_or_else(|| Error::SchemaViolation("empty payload".into()))?
        .map_err(|e| Error::SchemaViolation(format!("mock could not parse payload: {e}")))
}

fn contains_any(haystack: &str, needles: &[String]) -> bool {
    needles.iter().any(|n| haystack.contains(&n.to_lowercase()))
}

/// Pure function of (request, rulebook) producing a schema-valid response.
pub fn mock_complete(request: &CompletionRequest, rulebook: &Rulebook) -> Result<String> {
    match request.schema_id.as_str() {
        schema::DISCOVERY => {
            let payload: DiscoveryPayload = leading_json(&request.user_payload)?;
            let texts: Vec<String> = payload.records.iter().map(|r| r.searchable_text()).collect();
            let features = rulebook
                .discovery
                .iter()
                .filter(|rule| {
                    let token = rule.trigger.to_lowercase();
                    texts.iter().any(|t| t.contains(&token))
                })
                .map(|rule| DiscoveryFeature {
                    feature_name: rule.feature_name.clone(),
                    subgoal: rule.subgoal.clone(),
                    causal_mechanism: rule.causal_mechanism.clone(),
                    definition: rule.definition.clone(),
                    computation_logic: rule.computation_logic.clone(),
                    abandoned_ideas: rule.abandoned_ideas.clone(),
                })
                .collect();
            Ok(serde_json::to_string(&DiscoveryResponse {
                batch_id: payload.batch_id,
                features,
            })?)
        }
        schema::CONSOLIDATION => {
            let payload: ConsolidationPayload = leading_json(&request.user_payload)?;
            let present: BTreeSet<&str> = payload.features.iter().map(|f| f.feature_id.as_str()).collect();
            let mut used: BTreeSet<&str> = BTreeSet::new();
            let mut decisions = Vec::new();
            for rule in &rulebook.merges {
                let ids: Vec<&str> = rule.member_feature_ids.iter().map(String::as_str).collect();
                if ids.iter().all(|id| present.contains(id) && !used.contains(id)) {
                    used.extend(ids.iter().copied());
                    decisions.push(MergeDecision {
                        merged_name: rule.merged_name.clone(),
                        member_feature_ids: rule.member_feature_ids.clone(),
                        justification: rule.justification.clone(),
                    });
                }
            }
            Ok(serde_json::to_string(&decisions)?)
        }
        schema::SCORING => {
            let payload: ScoringPayload = leading_json(&request.user_payload)?;
            let rules: HashMap<&str, &ScoringRule> =
                rulebook.scoring.iter().map(|r| (r.feature_id.as_str(), r)).collect();
            let texts: Vec<(String, &str)> = payload
                .records
                .iter()
                .map(|r| (r.searchable_text(), r.entity_id.as_str()))
                .collect();
            let mut assignments = BTreeMap::new();
            for feature in &payload.features {
                let tagged: Vec<String> = match rules.get(feature.feature_id.as_str()) {
                    Some(rule) => texts
                        .iter()
                        .filter(|(text, _)| contains_any(text, &rule.triggers))
                        .map(|(_, id)| id.to_string())
                        .collect(),
                    None => Vec::new(),
                };
                assignments.insert(feature.feature_id.clone(), tagged);
            }
            Ok(serde_json::to_string(&AssignmentsResponse { assignments })?)
        }
        other => Err(Error::UnknownSchema(other.to_string())),
    }
}

/// Rule-based provider: no network, deterministic output.
#[derive(Debug, Clone, Default)]
pub struct MockProvider {
    rulebook: Rulebook,
}

impl MockProvider {
    pub fn new(rulebook: Rulebook) -> Self {
        Self { rulebook }
    }

    pub fn rulebook(&self) -> &Rulebook {
        &self.rulebook
    }

    /// Convenience: a backend around this mock.
    pub fn backend(rulebook: Rulebook, prices: PriceTable) -> Backend {
        Backend::new(Box::new(Self::new(rulebook)), prices)
    }
}

impl Provider for MockProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Mock
    }

    fn complete_raw(&self, request: &CompletionRequest) -> Result<RawCompletion> {
        mock_complete(request, &self.rulebook).map(RawCompletion::text)
    }
}

/// Serves queued responses per schema id, then defers to a fallback provider.
#[derive(Default)]
pub struct ScriptedProvider {
    queues: Mutex<HashMap<String, VecDeque<String>>>,
    fallback: Option<Box<dyn Provider>>,
    calls: AtomicUsize,
    seen: Mutex<Vec<CompletionRequest>>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fallback(fallback: Box<dyn Provider>) -> Self {
        Self {
            fallback: Some(fallback),
            ..Self::default()
        }
    }

    pub fn push(&self, schema_id: &str, response: impl Into<String>) -> &Self {
        self.queues
            .lock()
            .unwrap()
            .entry(schema_id.to_string())
            .or_default()
            .push_back(response.into());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl Provider for ScriptedProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Mock
    }

    fn complete_raw(&self, request: &CompletionRequest) -> Result<RawCompletion> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen.lock().unwrap().push(request.clone());
        let queued = self
            .queues
            .lock()
            .unwrap()
            .get_mut(&request.schema_id)
            .and_then(VecDeque::pop_front);
        match (queued, &self.fallback) {
            (Some(text), _) => Ok(RawCompletion::text(text)),
            (None, Some(fallback)) => fallback.complete_raw(request),
            (None, None) => Err(Error::UnknownSchema(format!(
                "no scripted response left for `{}`",
                request.schema_id
            ))),
        }
    }
}

/// Lets a provider be shared behind an `Arc` (e.g. to inspect a scripted
/// provider after handing it to a [`Backend`]).
impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn kind(&self) -> ProviderKind {
        (**self).kind()
    }

    fn complete_raw(&self, request: &CompletionRequest) -> Result<RawCompletion> {
        (**self).complete_raw(request)
    }
}
