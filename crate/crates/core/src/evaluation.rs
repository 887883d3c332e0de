//! Held-out protocol: freeze the consolidated features, audit upstream
//! payloads for held-out ids, then score and measure on the held-out set.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use aho_corasick::AhoCorasick;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::score_features;
use crate::backend::{schema, AgentTranscript, Backend};
use crate::error::{Error, Result};
use crate::metrics::compute_stats;
use crate::model::{AssignmentMatrix, Dataset, DatasetRole, FeatureSpec, FeatureStats};

/// Immutable post-consolidation feature list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenFeatureSet {
    features: Vec<FeatureSpec>,
    #[serde(rename = "checksum")]
    freeze_checksum: String,
    #[serde(rename = "run_id")]
    source_run_id: String,
}

/// SHA-256 over the canonical JSON serialization of the feature list.
pub fn feature_checksum(features: &[FeatureSpec]) -> String {
    let canonical = serde_json::to_vec(features).expect("features serialize");
    hex::encode(Sha256::digest(&canonical))
}

pub fn freeze(master: &[FeatureSpec], run_id: &str) -> Result<FrozenFeatureSet> {
    if master.is_empty() {
        return Err(Error::EmptyFeatureSet);
    }
    Ok(FrozenFeatureSet {
        freeze_checksum: feature_checksum(master),
        features: master.to_vec(),
        source_run_id: run_id.to_string(),
    })
}

impl FrozenFeatureSet {
    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn checksum(&self) -> &str {
        &self.freeze_checksum
    }

    pub fn run_id(&self) -> &str {
        &self.source_run_id
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Recomputes the checksum and compares it with the stored one.
    pub fn verify(&self) -> Result<()> {
        let found = feature_checksum(&self.features);
        if found != self.freeze_checksum {
            return Err(Error::ChecksumMismatch {
                expected: self.freeze_checksum.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let frozen: Self = serde_json::from_slice(&bytes)?;
        frozen.verify()?;
        Ok(frozen)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LeakageViolation {
    pub transcript_id: String,
    pub offending_entity_id: String,
}

/// Violations found by [`audit_leakage`]; empty means the audit passed.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AuditReport {
    pub violations: Vec<LeakageViolation>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn is_id_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'-'
}

/// Scans every discovery and consolidation request for held-out entity ids.
///
/// An occurrence counts only when it is not embedded in a longer run of
/// id characters, so `h-0001` does not match inside `h-00012`. Transcripts
/// of other schemas (scoring) are ignored.
pub fn audit_leakage(transcripts: &[AgentTranscript], heldout: &Dataset) -> AuditReport {
    let ids: Vec<&str> = heldout.entity_ids().collect();
    let matcher = AhoCorasick::new(&ids).expect("entity ids build an automaton");
    let mut found: BTreeSet<LeakageViolation> = BTreeSet::new();
    for t in transcripts {
        let schema_id = t.request.schema_id.as_str();
        if schema_id != schema::DISCOVERY && schema_id != schema::CONSOLIDATION {
            continue;
        }
        for text in [&t.request.system_prompt, &t.request.user_payload] {
            let bytes = text.as_bytes();
            for m in matcher.find_overlapping_iter(text.as_str()) {
                let before_ok = m.start() == 0 || !is_id_char(bytes[m.start() - 1]);
                let after_ok = m.end() == bytes.len() || !is_id_char(bytes[m.end()]);
                if before_ok && after_ok {
                    found.insert(LeakageViolation {
                        transcript_id: t.request.request_id.clone(),
                        offending_entity_id: ids[m.pattern().as_usize()].to_string(),
                    });
                }
            }
        }
    }
    AuditReport {
        violations: found.into_iter().collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringOptions {
    pub feature_batch: usize,
    pub entity_batch: usize,
    pub parallelism: usize,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self {
            feature_batch: 100,
            entity_batch: 1000,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeldoutEvaluation {
    pub freeze_checksum: String,
    pub matrix: AssignmentMatrix,
    pub stats: Vec<FeatureStats>,
    pub transcripts: Vec<AgentTranscript>,
    pub audit: AuditReport,
}

/// Applies a frozen feature set to the held-out dataset.
///
/// `upstream` are the discovery and consolidation transcripts of the run
/// that produced `frozen`; any held-out id found in them aborts with
/// `LeakageDetected`.
pub fn evaluate_heldout(
    frozen: &FrozenFeatureSet,
    heldout: &Dataset,
    backend: &Backend,
    upstream: &[AgentTranscript],
    options: ScoringOptions,
) -> Result<HeldoutEvaluation> {
    if heldout.role() != DatasetRole::Heldout {
        return Err(Error::WrongRole {
            expected: DatasetRole::Heldout.to_string(),
            actual: heldout.role().to_string(),
        });
    }
    frozen.verify()?;
    let audit = audit_leakage(upstream, heldout);
    if !audit.passed() {
        return Err(Error::LeakageDetected(audit.violations.len()));
    }
    let scoring = score_features(
        frozen.features(),
        heldout,
        backend,
        options.feature_batch,
        options.entity_batch,
        options.parallelism,
    )?;
    let stats = compute_stats(frozen.features(), &scoring.matrix, heldout)?;
    Ok(HeldoutEvaluation {
        freeze_checksum: frozen.checksum().to_string(),
        matrix: scoring.matrix,
        stats,
        transcripts: scoring.transcripts,
        audit,
    })
}
