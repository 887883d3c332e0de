//! Synthetic labeled populations with planted features of known delta-SR,
//! and the mock rulebooks that recover them.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{DiscoveryRule, MergeRule, Rulebook, ScoringRule};
use crate::error::{Error, Result};
use crate::metrics::delta_sr;
use crate::model::{slugify, AttrValue, Attributes, Dataset, DatasetRole, EntityRecord, Outcome, PopulationCounts};

/// Filler words for the free-text attribute. Trigger tokens must not occur
/// inside any of these.
const FILLER: &[&str] = &[
    "analytics", "platform", "marketplace", "consumer", "enterprise", "hardware", "logistics", "payments",
    "retail", "health", "clinical", "insurance", "mobility", "energy", "climate", "security", "developer",
    "tooling", "infrastructure", "media", "gaming", "education", "recruiting", "travel", "food", "robotics",
    "sensors", "biotech", "lending", "wealth", "compliance", "legal", "property", "construction", "agritech",
    "supply", "chain", "manufacturing", "design", "creator", "community", "subscription", "wholesale",
    "operator", "engineer", "manager", "director", "consultant", "researcher", "analyst", "founder", "advisor",
    "seed", "series", "angel", "bootstrapped", "remote", "hybrid", "regional", "global",
];

const SECTORS: &[&str] = &["fintech", "healthtech", "saas", "deeptech", "consumer", "industrial", "mobility"];

const YEARS: std::ops::RangeInclusive<i64> = 2008..=2022;

/// One feature planted into a synthetic population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedFeature {
    pub feature_name: String,
    /// Lowercase token written into the summary text of carrier records.
    pub trigger_token: String,
    pub target_n1: u64,
    pub target_n0: u64,
    /// Filled in by [`PopulationPlan::resolve`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_delta_sr: Option<f64>,
    #[serde(default = "default_subgoal")]
    pub subgoal: String,
    /// Plants sharing a group are proposed as one merge during consolidation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_group: Option<String>,
}

fn default_subgoal() -> String {
    "founder capability formation".into()
}

impl PlantedFeature {
    pub fn new(feature_name: &str, trigger_token: &str, target_n1: u64, target_n0: u64) -> Self {
        Self {
            feature_name: feature_name.into(),
            trigger_token: trigger_token.into(),
            target_n1,
            target_n0,
            expected_delta_sr: None,
            subgoal: default_subgoal(),
            merge_group: None,
        }
    }

    pub fn feature_id(&self) -> String {
        slugify(&self.feature_name)
    }
}

/// Plant plan file: population size, id prefix and planted features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationPlan {
    pub counts: PopulationCounts,
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
    pub planted: Vec<PlantedFeature>,
}

fn default_prefix() -> String {
    "e".into()
}

impl PopulationPlan {
    pub fn new(counts: PopulationCounts, id_prefix: &str, planted: Vec<PlantedFeature>) -> Self {
        Self {
            counts,
            id_prefix: id_prefix.into(),
            planted,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Checks feasibility and fills `expected_delta_sr` for every plant.
    pub fn resolve(mut self) -> Result<Self> {
        check_plan(&self)?;
        for p in &mut self.planted {
            p.expected_delta_sr = Some(delta_sr(p.target_n1, p.target_n0, self.counts)?);
        }
        Ok(self)
    }
}

/// The ten top cognitive-condition rows as plants, tokens `zqfeat01`..`zqfeat10`.
pub fn table_plants() -> Vec<PlantedFeature> {
    const ROWS: [(&str, u64, u64); 10] = [
        ("top_university_education_flag", 82, 37),
        ("education_top10_qs_flag", 67, 33),
        ("highest_degree_level", 304, 292),
        ("education_top50_qs_flag", 70, 41),
        ("technical_background_flag", 190, 155),
        ("functional_role_diversity", 241, 222),
        ("job_count_total", 254, 241),
        ("job_tenure_longest_bucket", 284, 289),
        ("cross_industry_breadth_count", 252, 239),
        ("functional_breadth_score", 245, 229),
    ];
    ROWS.iter()
        .enumerate()
        .map(|(i, (name, n1, n0))| PlantedFeature::new(name, &format!("zqfeat{:02}", i + 1), *n1, *n0))
        .collect()
}

fn infeasible(msg: impl Into<String>) -> Error {
    Error::InfeasiblePlan(msg.into())
}

fn check_plan(plan: &PopulationPlan) -> Result<()> {
    let counts = plan.counts;
    let mut fixed: Vec<String> = FILLER.iter().chain(SECTORS).map(|s| s.to_string()).collect();
    fixed.extend(YEARS.map(|y| y.to_string()));
    for (i, p) in plan.planted.iter().enumerate() {
        let token = &p.trigger_token;
        if token.is_empty() || token.chars().any(|c| c.is_whitespace() || c.is_uppercase()) {
            return Err(infeasible(format!("trigger `{token}` must be a non-empty lowercase word")));
        }
        if p.target_n1 > counts.successes || p.target_n0 > counts.failures {
            return Err(infeasible(format!(
                "`{token}` wants ({}, {}) in a population of ({}, {})",
                p.target_n1, p.target_n0, counts.successes, counts.failures
            )));
        }
        if let Some(word) = fixed.iter().find(|w| w.contains(token.as_str()) || token.contains(w.as_str())) {
            return Err(infeasible(format!("trigger `{token}` overlaps filler `{word}`")));
        }
        for q in &plan.planted[i + 1..] {
            if q.trigger_token.contains(token.as_str()) || token.contains(q.trigger_token.as_str()) {
                return Err(infeasible(format!("triggers `{token}` and `{}` overlap", q.trigger_token)));
            }
        }
    }
    Ok(())
}

/// Deterministic population for `plan`. Each trigger token appears in
/// exactly `target_n1` successful and `target_n0` failed records.
pub fn generate_population(plan: &PopulationPlan, seed: u64, role: DatasetRole) -> Result<Dataset> {
    check_plan(plan)?;
    let counts = plan.counts;
    let total = counts.total() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut outcomes: Vec<Outcome> = std::iter::repeat_n(Outcome::Success, counts.successes as usize)
        .chain(std::iter::repeat_n(Outcome::Failure, counts.failures as usize))
        .collect();
    outcomes.shuffle(&mut rng);
    let successes: Vec<usize> = (0..total).filter(|&i| outcomes[i] == Outcome::Success).collect();
    let failures: Vec<usize> = (0..total).filter(|&i| outcomes[i] == Outcome::Failure).collect();

    let mut words: Vec<Vec<String>> = (0..total)
        .map(|_| {
            let n = rng.gen_range(6..=12);
            (0..n).map(|_| FILLER[rng.gen_range(0..FILLER.len())].to_string()).collect()
        })
        .collect();
    for p in &plan.planted {
        let chosen = index::sample(&mut rng, successes.len(), p.target_n1 as usize)
            .into_iter()
            .map(|k| successes[k])
            .chain(
                index::sample(&mut rng, failures.len(), p.target_n0 as usize)
                    .into_iter()
                    .map(|k| failures[k]),
            );
        for i in chosen {
            let at = rng.gen_range(0..=words[i].len());
            words[i].insert(at, p.trigger_token.clone());
        }
    }

    let width = total.to_string().len().max(4);
    let records = (0..total)
        .map(|i| {
            let mut attributes = Attributes::new();
            attributes.insert("sector".into(), AttrValue::text(SECTORS[rng.gen_range(0..SECTORS.len())]));
            attributes.insert("founded_year".into(), AttrValue::int(rng.gen_range(YEARS)));
            attributes.insert("summary".into(), AttrValue::text(words[i].join(" ")));
            EntityRecord::new(format!("{}{:0width$}", plan.id_prefix, i + 1), attributes, outcomes[i])
        })
        .collect();
    Dataset::new(records, role)
}

/// Number of (successful, failed) records whose attributes contain `token`.
pub fn scan_token(dataset: &Dataset, token: &str) -> (u64, u64) {
    let token = token.to_lowercase();
    let (mut n1, mut n0) = (0, 0);
    for r in dataset.records() {
        let hit = r.attributes.values().any(|v| v.to_string().to_lowercase().contains(&token));
        match (hit, r.outcome) {
            (true, Some(Outcome::Success)) => n1 += 1,
            (true, Some(Outcome::Failure)) => n0 += 1,
            _ => {}
        }
    }
    (n1, n0)
}

/// Mock rules that rediscover and rescore every planted feature.
///
/// Plants sharing a `merge_group` produce one merge rule whose merged
/// feature is scored by the union of the members' tokens.
pub fn derive_rulebook(planted: &[PlantedFeature]) -> Result<Rulebook> {
    let mut seen = BTreeSet::new();
    for p in planted {
        if !seen.insert(p.trigger_token.to_lowercase()) {
            return Err(Error::DuplicateTrigger(p.trigger_token.clone()));
        }
    }
    let mut book = Rulebook::default();
    for p in planted {
        book.discovery.push(DiscoveryRule {
            trigger: p.trigger_token.clone(),
            feature_name: p.feature_name.clone(),
            subgoal: p.subgoal.clone(),
            causal_mechanism: format!("carriers of `{}` differ in outcome", p.trigger_token),
            definition: format!("record mentions {}", p.trigger_token),
            computation_logic: format!("1 if any attribute contains \"{}\" else 0", p.trigger_token),
            abandoned_ideas: Vec::new(),
        });
        book.scoring.push(ScoringRule {
            feature_id: p.feature_id(),
            triggers: vec![p.trigger_token.clone()],
        });
    }
    let mut groups: Vec<(&str, Vec<&PlantedFeature>)> = Vec::new();
    for p in planted {
        if let Some(g) = p.merge_group.as_deref() {
            match groups.iter_mut().find(|(name, _)| *name == g) {
                Some((_, members)) => members.push(p),
                None => groups.push((g, vec![p])),
            }
        }
    }
    for (group, members) in groups {
        if members.len() < 2 {
            continue;
        }
        book.merges.push(MergeRule {
            merged_name: group.to_string(),
            member_feature_ids: members.iter().map(|p| p.feature_id()).collect(),
            justification: format!("members describe the same signal `{group}`"),
        });
        book.scoring.push(ScoringRule {
            feature_id: slugify(group),
            triggers: members.iter().map(|p| p.trigger_token.clone()).collect(),
        });
    }
    Ok(book)
}
