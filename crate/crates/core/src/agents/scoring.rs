use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::discovery::strip_fence;
use super::payload::{AssignmentsResponse, FeatureBrief, ScoringPayload};
use super::prompts::SCORING_PROMPT;
use super::{complete_validated, run_parallel};
use crate::backend::{schema, AgentTranscript, Backend, CompletionRequest};
use crate::error::{Error, Result};
use crate::model::{AssignmentMatrix, Dataset, FeatureSpec, RedactedRecord};

#[derive(Debug, Clone)]
pub struct Scoring {
    pub matrix: AssignmentMatrix,
    pub transcripts: Vec<AgentTranscript>,
}

/// Parses an Agent 3 reply for one (feature batch, entity batch) cell.
/// Features the agent left out map to an empty set.
pub fn validate_assignments(
    raw: &str,
    feature_ids: &HashSet<&str>,
    entity_ids: &HashSet<&str>,
) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let response: AssignmentsResponse =
        serde_json::from_str(strip_fence(raw)).map_err(|e| Error::SchemaViolation(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (feature_id, entities) in response.assignments {
        if !feature_ids.contains(feature_id.as_str()) {
            return Err(Error::SchemaViolation(format!(
                "assignment for feature `{feature_id}` which was not in the batch"
            )));
        }
        if let Some(bad) = entities.iter().find(|e| !entity_ids.contains(e.as_str())) {
            return Err(Error::UnknownEntityId(bad.clone()));
        }
        out.insert(feature_id, entities.into_iter().collect());
    }
    Ok(out)
}

/// Tags entities of `dataset` with frozen `features` using Agent 3.
///
/// Work is cut into cells of up to `feature_batch` features by
/// `entity_batch` records; each cell is one call. Records are label-redacted
/// before serialization.
pub fn score_features(
    features: &[FeatureSpec],
    dataset: &Dataset,
    backend: &Backend,
    feature_batch: usize,
    entity_batch: usize,
    parallelism: usize,
) -> Result<Scoring> {
    let records = dataset.redact_labels();
    let feature_chunks: Vec<&[FeatureSpec]> = features.chunks(feature_batch.max(1)).collect();
    let record_chunks: Vec<&[RedactedRecord]> = records.chunks(entity_batch.max(1)).collect();
    let mut cells = Vec::with_capacity(feature_chunks.len() * record_chunks.len());
    for (fi, fc) in feature_chunks.iter().enumerate() {
        for (ei, rc) in record_chunks.iter().enumerate() {
            cells.push((fi, ei, *fc, *rc));
        }
    }
    let role = dataset.role();
    let results = run_parallel(&cells, parallelism, |(fi, ei, fc, rc)| {
        let payload = ScoringPayload {
            features: fc
                .iter()
                .map(|f| FeatureBrief {
                    feature_id: f.feature_id.clone(),
                    feature_name: f.feature_name.clone(),
                    definition: f.definition.clone(),
                })
                .collect(),
            records: rc.to_vec(),
        };
        let request = CompletionRequest::new(
            format!("scoring/{role}/f{:03}/e{:03}", fi + 1, ei + 1),
            SCORING_PROMPT,
            serde_json::to_string(&payload)?,
            schema::SCORING,
        );
        let fids: HashSet<&str> = fc.iter().map(|f| f.feature_id.as_str()).collect();
        let eids: HashSet<&str> = rc.iter().map(|r| r.entity_id.as_str()).collect();
        complete_validated(backend, request, |raw| validate_assignments(raw, &fids, &eids))
    });

    let mut assignments: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut transcripts = Vec::new();
    for r in results {
        let (cell, ts) = r?;
        for (fid, ids) in cell {
            assignments.entry(fid).or_default().extend(ids);
        }
        transcripts.extend(ts);
    }
    Ok(Scoring {
        matrix: AssignmentMatrix::new(assignments, features, dataset)?,
        transcripts,
    })
}
