use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::payload::{DiscoveryPayload, DiscoveryResponse};
use super::prompts::{normalize_subgoal, PromptCondition, MAX_SUBGOALS, PERMITTED_SUBGOALS, VANILLA_SUBGOAL};
use super::{complete_validated, run_parallel};
use crate::backend::{schema, AgentTranscript, Backend, CompletionRequest};
use crate::error::{Error, Result};
use crate::model::{slugify, Condition, FeatureSpec, Provenance, RedactedRecord};

/// A serialized, label-free batch of records for Agent 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveryBatch {
    pub batch_id: String,
    pub entity_ids: Vec<String>,
    pub payload: String,
}

/// Splits records into consecutive batches of `batch_size` (the last one may
/// be short). Batch ids are `batch_0001`, `batch_0002`, ...
pub fn build_discovery_batches(records: &[RedactedRecord], batch_size: usize) -> Vec<DiscoveryBatch> {
    records
        .chunks(batch_size.max(1))
        .enumerate()
        .map(|(i, chunk)| {
            let batch_id = format!("batch_{:04}", i + 1);
            let payload = serde_json::to_string(&DiscoveryPayload {
                batch_id: batch_id.clone(),
                records: chunk.to_vec(),
            })
            .expect("records serialize");
            DiscoveryBatch {
                batch_id,
                entity_ids: chunk.iter().map(|r| r.entity_id.clone()).collect(),
                payload,
            }
        })
        .collect()
}

/// Strips one surrounding markdown code fence, if present.
pub(crate) fn strip_fence(raw: &str) -> &str {
    let trimmed = raw.trim();
    if let Some(rest) = trimmed.strip_prefix("```") {
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphabetic());
        if let Some(body) = rest.trim_end().strip_suffix("```") {
            return body.trim();
        }
    }
    trimmed
}

/// Parses and checks an Agent 1 reply for `batch_id` under `condition`.
pub fn validate_discovery_response(raw: &str, batch_id: &str, condition: Condition) -> Result<DiscoveryResponse> {
    let response: DiscoveryResponse =
        serde_json::from_str(strip_fence(raw)).map_err(|e| Error::SchemaViolation(e.to_string()))?;
    if response.batch_id != batch_id {
        return Err(Error::SchemaViolation(format!(
            "batch_id `{}` does not match `{batch_id}`",
            response.batch_id
        )));
    }
    if let Some(i) = response.features.iter().position(|f| f.feature_name.trim().is_empty()) {
        return Err(Error::SchemaViolation(format!("features[{i}].feature_name is empty")));
    }
    if condition == Condition::Cognitive {
        let distinct: BTreeSet<String> = response.features.iter().map(|f| normalize_subgoal(&f.subgoal)).collect();
        if distinct.len() > MAX_SUBGOALS {
            return Err(Error::SubgoalViolation(format!(
                "{} distinct subgoals, at most {MAX_SUBGOALS} allowed",
                distinct.len()
            )));
        }
        if let Some(bad) = distinct.iter().find(|s| !PERMITTED_SUBGOALS.contains(&s.as_str())) {
            return Err(Error::SubgoalViolation(format!("`{bad}` is not a permitted subgoal")));
        }
    }
    Ok(response)
}

fn to_specs(response: DiscoveryResponse, condition: Condition) -> Vec<FeatureSpec> {
    let specs = response
        .features
        .into_iter()
        .map(|f| FeatureSpec {
            feature_id: slugify(&f.feature_name),
            subgoal: match condition {
                Condition::Cognitive => normalize_subgoal(&f.subgoal),
                Condition::Vanilla => VANILLA_SUBGOAL.to_string(),
            },
            feature_name: f.feature_name,
            causal_mechanism: f.causal_mechanism,
            definition: f.definition,
            computation_logic: f.computation_logic,
            abandoned_ideas: f.abandoned_ideas,
            provenance: vec![Provenance::Batch(response.batch_id.clone())],
            condition,
        })
        .collect();
    accumulate_master_list(Vec::new(), specs)
}

/// One Agent 1 call (plus at most one corrective re-prompt).
pub fn discover_features(
    batch: &DiscoveryBatch,
    condition: &PromptCondition,
    backend: &Backend,
) -> Result<(Vec<FeatureSpec>, Vec<AgentTranscript>)> {
    let request = CompletionRequest::new(
        format!("discovery/{}", batch.batch_id),
        condition.system_prompt(batch.entity_ids.len()),
        batch.payload.clone(),
        schema::DISCOVERY,
    );
    let (response, transcripts) = complete_validated(backend, request, |raw| {
        validate_discovery_response(raw, &batch.batch_id, condition.kind)
    })?;
    Ok((to_specs(response, condition.kind), transcripts))
}

/// Runs Agent 1 over every batch and folds the results, in batch order, into
/// one master list.
pub fn discover_all(
    batches: &[DiscoveryBatch],
    condition: &PromptCondition,
    backend: &Backend,
    parallelism: usize,
) -> Result<(Vec<FeatureSpec>, Vec<AgentTranscript>)> {
    let results = run_parallel(batches, parallelism, |b| discover_features(b, condition, backend));
    let mut master = Vec::new();
    let mut transcripts = Vec::new();
    for result in results {
        let (specs, ts) = result?;
        master = accumulate_master_list(master, specs);
        transcripts.extend(ts);
    }
    Ok((master, transcripts))
}

/// Appends `incoming` to `existing`, coalescing exact feature_id duplicates
/// (provenance and abandoned ideas are unioned, first-seen fields win).
pub fn accumulate_master_list(mut existing: Vec<FeatureSpec>, incoming: Vec<FeatureSpec>) -> Vec<FeatureSpec> {
    let mut index: HashMap<String, usize> = existing
        .iter()
        .enumerate()
        .map(|(i, f)| (f.feature_id.clone(), i))
        .collect();
    for spec in incoming {
        match index.get(&spec.feature_id) {
            Some(&i) => {
                let target = &mut existing[i];
                for p in spec.provenance {
                    if !target.provenance.contains(&p) {
                        target.provenance.push(p);
                    }
                }
                for idea in spec.abandoned_ideas {
                    if !target.abandoned_ideas.contains(&idea) {
                        target.abandoned_ideas.push(idea);
                    }
                }
            }
            None => {
                index.insert(spec.feature_id.clone(), existing.len());
                existing.push(spec);
            }
        }
    }
    existing
}

/// Why an abandoned reasoning path was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionCause {
    ProxyRisk,
    Leakage,
    ObservabilityFailure,
    CausalAmbiguity,
    Other(String),
}

impl RejectionCause {
    /// Keyword classification of a free-text rejection reason.
    pub fn classify(reason: &str) -> Self {
        let r = reason.to_lowercase();
        let has = |keys: &[&str]| keys.iter().any(|k| r.contains(k));
        if has(&["proxy", "prestige", "descriptive"]) {
            RejectionCause::ProxyRisk
        } else if has(&["leak", "post-outcome", "post outcome", "hindsight", "after the outcome", "after success"]) {
            RejectionCause::Leakage
        } else if has(&["observab", "unavailable", "not available", "not measurable", "cannot be measured"]) {
            RejectionCause::ObservabilityFailure
        } else if has(&["causal", "direction", "confound", "ambigu"]) {
            RejectionCause::CausalAmbiguity
        } else {
            RejectionCause::Other(reason.trim().to_string())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{DiscoveryRule, MockProvider, PriceTable, Rulebook, ScriptedProvider};
    use crate::model::{AttrValue, Attributes};
    use std::sync::Arc;

    fn records(n: usize) -> Vec<RedactedRecord> {
        (0..n)
            .map(|i| {
                let mut a = Attributes::new();
                a.insert("background".into(), AttrValue::text(format!("profile {i}")));
                RedactedRecord {
                    entity_id: format!("e{i:04}"),
                    attributes: a,
                }
            })
            .collect()
    }

    fn spec(id: &str, batch: &str) -> FeatureSpec {
        FeatureSpec {
            feature_id: id.into(),
            feature_name: id.into(),
            subgoal: VANILLA_SUBGOAL.into(),
            causal_mechanism: String::new(),
            definition: String::new(),
            computation_logic: String::new(),
            abandoned_ideas: vec![],
            provenance: vec![Provenance::Batch(batch.into())],
            condition: Condition::Vanilla,
        }
    }

    fn rule(trigger: &str, name: &str, subgoal: &str) -> DiscoveryRule {
        DiscoveryRule {
            trigger: trigger.into(),
            feature_name: name.into(),
            subgoal: subgoal.into(),
            causal_mechanism: "m".into(),
            definition: "d".into(),
            computation_logic: "c".into(),
            abandoned_ideas: vec![],
        }
    }

    #[test]
    fn batches_of_fifty() {
        let b = build_discovery_batches(&records(1000), 50);
        assert_eq!(b.len(), 20);
        assert!(b.iter().all(|x| x.entity_ids.len() == 50));
        let ids: BTreeSet<&str> = b.iter().map(|x| x.batch_id.as_str()).collect();
        assert_eq!(ids.len(), 20);
        assert_eq!(build_discovery_batches(&records(50), 50).len(), 1);
    }

    #[test]
    fn short_last_batch_partitions_input() {
        let input = records(101);
        let b = build_discovery_batches(&input, 50);
        assert_eq!(b.iter().map(|x| x.entity_ids.len()).collect::<Vec<_>>(), vec![50, 50, 1]);
        let union: Vec<&str> = b.iter().flat_map(|x| x.entity_ids.iter().map(String::as_str)).collect();
        let expected: Vec<&str> = input.iter().map(|r| r.entity_id.as_str()).collect();
        assert_eq!(union, expected);
        assert!(b.iter().all(|x| !x.payload.contains("outcome")));
    }

    #[test]
    fn accumulate_identity_and_union() {
        let out = accumulate_master_list(vec![], vec![spec("f", "b1")]);
        assert_eq!(out, vec![spec("f", "b1")]);
        let out = accumulate_master_list(vec![spec("f", "b1")], vec![spec("f", "b2"), spec("g", "b2")]);
        assert_eq!(out.len(), 2);
        assert_eq!(
            out[0].provenance,
            vec![Provenance::Batch("b1".into()), Provenance::Batch("b2".into())]
        );
        assert_eq!(out[1].feature_id, "g");
    }

    #[test]
    fn mock_discovery_produces_slug() {
        let mut recs = records(3);
        recs[1].attributes.insert("degree".into(), AttrValue::text("BSc Computer Science, technical"));
        let book = Rulebook {
            discovery: vec![rule("technical", "Technical Background Flag", "founder capability formation")],
            ..Default::default()
        };
        let backend = MockProvider::backend(book, PriceTable::default());
        let batch = &build_discovery_batches(&recs, 50)[0];
        let (specs, ts) =
            discover_features(batch, &PromptCondition::builtin(Condition::Cognitive), &backend).unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].feature_id, "technical_background_flag");
        assert_eq!(specs[0].provenance, vec![Provenance::Batch("batch_0001".into())]);
        assert_eq!(specs[0].condition, Condition::Cognitive);
        assert_eq!(ts.len(), 1);
    }

    #[test]
    fn empty_match_is_valid() {
        let backend = MockProvider::backend(Rulebook::default(), PriceTable::default());
        let batch = &build_discovery_batches(&records(5), 50)[0];
        let (specs, ts) =
            discover_features(batch, &PromptCondition::builtin(Condition::Vanilla), &backend).unwrap();
        assert!(specs.is_empty());
        assert_eq!(ts[0].validation, crate::backend::Validation::Valid);
    }

    #[test]
    fn vanilla_subgoal_is_unspecified() {
        let recs = records(2);
        let book = Rulebook {
            discovery: vec![rule("profile", "x", "something odd")],
            ..Default::default()
        };
        let backend = MockProvider::backend(book, PriceTable::default());
        let batch = &build_discovery_batches(&recs, 50)[0];
        let (specs, _) = discover_features(batch, &PromptCondition::builtin(Condition::Vanilla), &backend).unwrap();
        assert_eq!(specs[0].subgoal, VANILLA_SUBGOAL);
        assert_eq!(specs[0].condition, Condition::Vanilla);
    }

    #[test]
    fn five_subgoals_rejected_after_retry() {
        let subgoals = ["founder capability formation", "team coordination and complementarity",
            "market structure and constraints", "early execution dynamics", "luck"];
        let book = Rulebook {
            discovery: subgoals.iter().enumerate().map(|(i, s)| rule("profile", &format!("f{i}"), s)).collect(),
            ..Default::default()
        };
        let provider = Arc::new(ScriptedProvider::with_fallback(Box::new(MockProvider::new(book))));
        let backend = Backend::new(Box::new(provider.clone()), PriceTable::default());
        let batch = &build_discovery_batches(&records(2), 50)[0];
        let err = discover_features(batch, &PromptCondition::builtin(Condition::Cognitive), &backend).unwrap_err();
        assert!(matches!(err, Error::SubgoalViolation(_)), "{err}");
        assert_eq!(err.code(), "SUBGOAL_VIOLATION");
        assert_eq!(provider.calls(), 2);
        // the same output is fine without cognitive constraints
        assert!(discover_features(batch, &PromptCondition::builtin(Condition::Vanilla), &backend).is_ok());
    }

    #[test]
    fn off_list_subgoal_rejected() {
        let raw = r#"{"batch_id":"b","features":[{"feature_name":"x","subgoal":"vibes","causal_mechanism":"","definition":"","computation_logic":"","abandoned_ideas":[]}]}"#;
        assert!(matches!(
            validate_discovery_response(raw, "b", Condition::Cognitive),
            Err(Error::SubgoalViolation(_))
        ));
        assert!(validate_discovery_response(raw, "b", Condition::Vanilla).is_ok());
    }

    #[test]
    fn schema_violations() {
        let good = r#"{"batch_id":"b","features":[{"feature_name":"x","subgoal":"Early execution dynamics","causal_mechanism":"","definition":"","computation_logic":"","abandoned_ideas":[{"idea":"i","reason":"r"}]}]}"#;
        assert!(validate_discovery_response(good, "b", Condition::Cognitive).is_ok());
        let fenced = format!("```json\n{good}\n```");
        assert!(validate_discovery_response(&fenced, "b", Condition::Cognitive).is_ok());
        let cases = [
            "not json",
            r#"{"features":[]}"#,
            r#"{"batch_id":"b","features":[],"extra":1}"#,
            r#"{"batch_id":"b","features":[{"feature_name":"x"}]}"#,
            r#"{"batch_id":"b","features":[{"feature_name":"x","subgoal":"early execution dynamics","causal_mechanism":"","definition":"","computation_logic":"","abandoned_ideas":[{"idea":"i"}]}]}"#,
            r#"{"batch_id":"b","features":[{"feature_name":7,"subgoal":"early execution dynamics","causal_mechanism":"","definition":"","computation_logic":"","abandoned_ideas":[]}]}"#,
            r#"{"batch_id":"other","features":[]}"#,
            r#"{"batch_id":"b","features":[{"feature_name":" ","subgoal":"early execution dynamics","causal_mechanism":"","definition":"","computation_logic":"","abandoned_ideas":[]}]}"#,
        ];
        for raw in cases {
            assert!(
                matches!(validate_discovery_response(raw, "b", Condition::Cognitive), Err(Error::SchemaViolation(_))),
                "{raw}"
            );
        }
    }

    #[test]
    fn corrective_reprompt_recovers() {
        let provider = Arc::new(ScriptedProvider::new());
        provider.push(schema::DISCOVERY, "{\"oops\": true}");
        provider.push(schema::DISCOVERY, r#"{"batch_id":"batch_0001","features":[]}"#);
        let backend = Backend::new(Box::new(provider.clone()), PriceTable::default());
        let batch = &build_discovery_batches(&records(2), 50)[0];
        let (specs, ts) = discover_features(batch, &PromptCondition::builtin(Condition::Cognitive), &backend).unwrap();
        assert!(specs.is_empty());
        assert_eq!(ts.len(), 2);
        assert!(matches!(ts[0].validation, crate::backend::Validation::Invalid(_)));
        assert_eq!(ts[1].request.request_id, "discovery/batch_0001/retry");
        assert!(provider.requests()[1].user_payload.contains("SCHEMA_VIOLATION"));
    }

    #[test]
    fn rejection_causes() {
        assert_eq!(RejectionCause::classify("proxy risk"), RejectionCause::ProxyRisk);
        assert_eq!(RejectionCause::classify("Prestige-based signal"), RejectionCause::ProxyRisk);
        assert_eq!(RejectionCause::classify("leakage: funding raised after founding"), RejectionCause::Leakage);
        assert_eq!(RejectionCause::classify("observability failure"), RejectionCause::ObservabilityFailure);
        assert_eq!(RejectionCause::classify("causal ambiguity"), RejectionCause::CausalAmbiguity);
        assert_eq!(RejectionCause::classify(" too rare "), RejectionCause::Other("too rare".into()));
    }
}
