//! Shared domain types: entity records, datasets, candidate features and
//! feature-to-entity assignments.
//!
//! Everything here is an immutable value once constructed. Maps are
//! `BTreeMap`/`BTreeSet` so serialization order is stable, which the
//! record/replay machinery relies on.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary outcome label of an entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
}

/// Attribute value: either free text or a JSON number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Number(serde_json::Number),
    Text(String),
}

impl AttrValue {
    pub fn text(s: impl Into<String>) -> Self {
        AttrValue::Text(s.into())
    }

    pub fn int(n: i64) -> Self {
        AttrValue::Number(n.into())
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Number(n) => write!(f, "{n}"),
            AttrValue::Text(s) => f.write_str(s),
        }
    }
}

pub type Attributes = BTreeMap<String, AttrValue>;

/// One labeled entity profile, in the on-disk line-delimited format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityRecord {
    pub entity_id: String,
    #[serde(default)]
    pub attributes: Attributes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
}

impl EntityRecord {
    pub fn new(entity_id: impl Into<String>, attributes: Attributes, outcome: Outcome) -> Self {
        Self {
            entity_id: entity_id.into(),
            attributes,
            outcome: Some(outcome),
        }
    }
}

/// An entity record with no outcome field at all.
///
/// Agent-facing payloads are built only from this type, so label blindness
/// holds by construction rather than by convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedactedRecord {
    pub entity_id: String,
    pub attributes: Attributes,
}

impl RedactedRecord {
    /// Lowercased concatenation of all attribute values, for token matching.
    pub fn searchable_text(&self) -> String {
        let mut out = String::new();
        for value in self.attributes.values() {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&value.to_string().to_lowercase());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRole {
    Discovery,
    Heldout,
}

impl fmt::Display for DatasetRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetRole::Discovery => "discovery",
            DatasetRole::Heldout => "heldout",
        })
    }
}

/// Class totals of a labeled population (N1 successes, N0 failures).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationCounts {
    pub successes: u64,
    pub failures: u64,
}

impl PopulationCounts {
    pub fn new(successes: u64, failures: u64) -> Result<Self> {
        if successes + failures == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            successes,
            failures,
        })
    }

    pub fn total(&self) -> u64 {
        self.successes + self.failures
    }

    pub fn base_rate(&self) -> f64 {
        self.successes as f64 / self.total() as f64
    }
}

/// A validated, fully labeled dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    records: Vec<EntityRecord>,
    role: DatasetRole,
    counts: PopulationCounts,
    index: HashMap<String, Outcome>,
}

impl Dataset {
    /// Validates records and computes class totals.
    pub fn new(records: Vec<EntityRecord>, role: DatasetRole) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut index = HashMap::with_capacity(records.len());
        let (mut successes, mut failures) = (0u64, 0u64);
        for record in &records {
            let outcome = record
                .outcome
                .ok_or_else(|| Error::MissingOutcome(record.entity_id.clone()))?;
            if index.insert(record.entity_id.clone(), outcome).is_some() {
                return Err(Error::DuplicateEntityId(record.entity_id.clone()));
            }
            match outcome {
                Outcome::Success => successes += 1,
                Outcome::Failure => failures += 1,
            }
        }
        Ok(Self {
            records,
            role,
            counts: PopulationCounts {
                successes,
                failures,
            },
            index,
        })
    }

    pub fn records(&self) -> &[EntityRecord] {
        &self.records
    }

    pub fn role(&self) -> DatasetRole {
        self.role
    }

    pub fn counts(&self) -> PopulationCounts {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn outcome_of(&self, entity_id: &str) -> Option<Outcome> {
        self.index.get(entity_id).copied()
    }

    pub fn contains(&self, entity_id: &str) -> bool {
        self.index.contains_key(entity_id)
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.entity_id.as_str())
    }

    /// Same records under a different role.
    pub fn with_role(mut self, role: DatasetRole) -> Self {
        self.role = role;
        self
    }

    /// Records with the outcome stripped, attribute content untouched.
    pub fn redact_labels(&self) -> Vec<RedactedRecord> {
        self.records
            .iter()
            .map(|r| RedactedRecord {
                entity_id: r.entity_id.clone(),
                attributes: r.attributes.clone(),
            })
            .collect()
    }
}

/// Prompting condition of a discovery run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Cognitive,
    Vanilla,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Cognitive => "cognitive",
            Condition::Vanilla => "vanilla",
        })
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cognitive" => Ok(Condition::Cognitive),
            "vanilla" => Ok(Condition::Vanilla),
            other => Err(Error::InvalidArgument(format!(
                "unknown condition `{other}` (expected cognitive|vanilla)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbandonedIdea {
    pub idea: String,
    pub reason: String,
}

/// Where a feature came from: a discovery batch, or a feature that was
/// merged into it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Batch(String),
    Feature(String),
}

/// A candidate feature in the master list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub feature_id: String,
    pub feature_name: String,
    pub subgoal: String,
    pub causal_mechanism: String,
    pub definition: String,
    pub computation_logic: String,
    pub abandoned_ideas: Vec<AbandonedIdea>,
    pub provenance: Vec<Provenance>,
    pub condition: Condition,
}

impl FeatureSpec {
    pub fn batch_ids(&self) -> impl Iterator<Item = &str> {
        self.provenance.iter().filter_map(|p| match p {
            Provenance::Batch(b) => Some(b.as_str()),
            Provenance::Feature(_) => None,
        })
    }
}

/// Canonical slug of a feature name: lowercase ASCII alphanumerics, runs of
/// anything else collapsed to a single underscore, no leading/trailing
/// underscore.
pub fn slugify(name: &str) -> String {
    let mut slug = String::with_capacity(name.len());
    let mut pending_sep = false;
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() {
            if pending_sep && !slug.is_empty() {
                slug.push('_');
            }
            pending_sep = false;
            slug.push(ch.to_ascii_lowercase());
        } else {
            pending_sep = true;
        }
    }
    if slug.is_empty() {
        slug.push_str("feature");
    }
    slug
}

/// Hands out unique feature ids, suffixing `_2`, `_3`, ... on collision.
#[derive(Debug, Default, Clone)]
pub struct SlugAllocator {
    taken: HashSet<String>,
}

impl SlugAllocator {
    pub fn new<I, S>(taken: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            taken: taken.into_iter().map(Into::into).collect(),
        }
    }

    pub fn allocate(&mut self, name: &str) -> String {
        let base = slugify(name);
        let mut candidate = base.clone();
        let mut counter = 2;
        while self.taken.contains(&candidate) {
            candidate = format!("{base}_{counter}");
            counter += 1;
        }
        self.taken.insert(candidate.clone());
        candidate
    }
}

/// Which entities exhibit which features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentMatrix {
    pub assignments: BTreeMap<String, BTreeSet<String>>,
}

impl AssignmentMatrix {
    /// Builds a matrix covering exactly `features`, validated against `dataset`.
    /// Features missing from `assignments` get an empty set.
    pub fn new(
        mut assignments: BTreeMap<String, BTreeSet<String>>,
        features: &[FeatureSpec],
        dataset: &Dataset,
    ) -> Result<Self> {
        let known: HashSet<&str> = features.iter().map(|f| f.feature_id.as_str()).collect();
        for (feature_id, entities) in &assignments {
            if !known.contains(feature_id.as_str()) {
                return Err(Error::UnknownFeatureId(feature_id.clone()));
            }
            if let Some(bad) = entities.iter().find(|e| !dataset.contains(e)) {
                return Err(Error::UnknownEntityId(bad.clone()));
            }
        }
        for f in features {
            assignments.entry(f.feature_id.clone()).or_default();
        }
        Ok(Self { assignments })
    }

    pub fn get(&self, feature_id: &str) -> Option<&BTreeSet<String>> {
        self.assignments.get(feature_id)
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// Per-feature statistics against one labeled population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub feature_id: String,
    pub n1: u64,
    pub n0: u64,
    /// `None` when the feature has zero or full support.
    pub delta_sr: Option<f64>,
    pub precision: f64,
    pub lift: f64,
    pub support: f64,
    pub base_rate: f64,
}

impl FeatureStats {
    pub fn count(&self) -> u64 {
        self.n1 + self.n0
    }
}
