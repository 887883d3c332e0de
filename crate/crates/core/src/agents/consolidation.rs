use std::collections::{BTreeMap, HashMap, HashSet};

use super::discovery::strip_fence;
use super::payload::{ConsolidationPayload, MergeCandidate, MergeDecision};
use super::prompts::CONSOLIDATION_PROMPT;
use super::{complete_validated, run_parallel};
use crate::backend::{schema, AgentTranscript, Backend, CompletionRequest};
use crate::error::{Error, Result};
use crate::model::{FeatureSpec, Provenance, SlugAllocator};

pub const MIN_MERGE_MEMBERS: usize = 2;
pub const MAX_MERGE_MEMBERS: usize = 5;

const STOPWORDS: &[&str] = &[
    "and", "any", "bucket", "count", "estimate", "flag", "has", "indicator", "level", "num", "number", "numeric",
    "score", "the", "total", "value", "with",
];

fn stems(feature_id: &str) -> Vec<String> {
    let mut out: Vec<String> = feature_id
        .split('_')
        .filter(|t| t.len() >= 3 && !STOPWORDS.contains(t))
        .map(|t| {
            if t.len() > 4 && t.ends_with('s') && !t.ends_with("ss") {
                t[..t.len() - 1].to_string()
            } else {
                t.to_string()
            }
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union_bounded(&mut self, a: usize, b: usize, cap: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb || self.size[ra] + self.size[rb] > cap {
            return;
        }
        let (big, small) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
    }
}

/// Groups master-list indices into consolidation batches of at most
/// `batch_size`, keeping features that share a name stem together.
///
/// Stems are joined rarest-first and a join is skipped if it would grow a
/// cluster past `batch_size`. Clusters are then packed, in order of first
/// appearance, into consecutive batches.
pub fn pre_cluster(master: &[FeatureSpec], batch_size: usize) -> Vec<Vec<usize>> {
    let cap = batch_size.max(MIN_MERGE_MEMBERS);
    if master.len() <= cap {
        return if master.is_empty() {
            Vec::new()
        } else {
            vec![(0..master.len()).collect()]
        };
    }
    let mut by_stem: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, f) in master.iter().enumerate() {
        for s in stems(&f.feature_id) {
            by_stem.entry(s).or_default().push(i);
        }
    }
    let mut stem_order: Vec<(&String, &Vec<usize>)> = by_stem.iter().filter(|(_, m)| m.len() > 1).collect();
    stem_order.sort_by(|a, b| a.1.len().cmp(&b.1.len()).then_with(|| a.0.cmp(b.0)));

    let mut dsu = DisjointSet::new(master.len());
    for (_, members) in stem_order {
        for pair in members.windows(2) {
            dsu.union_bounded(pair[0], pair[1], cap);
        }
    }

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..master.len() {
        let root = dsu.find(i);
        let idx = *slot.entry(root).or_insert_with(|| {
            clusters.push(Vec::new());
            clusters.len() - 1
        });
        clusters[idx].push(i);
    }

    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for cluster in clusters {
        if !current.is_empty() && current.len() + cluster.len() > cap {
            batches.push(std::mem::take(&mut current));
        }
        current.extend(cluster);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// Parses and checks an Agent 2 reply against the ids it was shown.
pub fn validate_merge_response(raw: &str, batch_ids: &HashSet<&str>) -> Result<Vec<MergeDecision>> {
    let decisions: Vec<MergeDecision> =
        serde_json::from_str(strip_fence(raw)).map_err(|e| Error::SchemaViolation(e.to_string()))?;
    let mut seen: HashSet<&str> = HashSet::new();
    for (i, d) in decisions.iter().enumerate() {
        if d.merged_name.trim().is_empty() {
            return Err(Error::SchemaViolation(format!("decision {i}: merged_name is empty")));
        }
        let n = d.member_feature_ids.len();
        if !(MIN_MERGE_MEMBERS..=MAX_MERGE_MEMBERS).contains(&n) {
            return Err(Error::SchemaViolation(format!(
                "decision {i}: {n} members, expected {MIN_MERGE_MEMBERS}..={MAX_MERGE_MEMBERS}"
            )));
        }
        for id in &d.member_feature_ids {
            if !batch_ids.contains(id.as_str()) {
                return Err(Error::UnknownMemberId(id.clone()));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::OverlappingMergeGroups(id.clone()));
            }
        }
    }
    Ok(decisions)
}

fn join_distinct<'a>(parts: impl Iterator<Item = &'a str>) -> String {
    let mut out: Vec<&str> = Vec::new();
    for p in parts.map(str::trim).filter(|p| !p.is_empty()) {
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out.join(" OR ")
}

/// Replaces each decision's members with one merged feature placed where the
/// first member stood. Decisions must already be validated and disjoint.
pub fn apply_merges(master: &[FeatureSpec], decisions: &[MergeDecision]) -> Result<Vec<FeatureSpec>> {
    let position: HashMap<&str, usize> = master
        .iter()
        .enumerate()
        .map(|(i, f)| (f.feature_id.as_str(), i))
        .collect();
    let mut owner: HashMap<usize, usize> = HashMap::new();
    for (d_idx, d) in decisions.iter().enumerate() {
        for id in &d.member_feature_ids {
            let pos = *position
                .get(id.as_str())
                .ok_or_else(|| Error::UnknownMemberId(id.clone()))?;
            if owner.insert(pos, d_idx).is_some() {
                return Err(Error::OverlappingMergeGroups(id.clone()));
            }
        }
    }

    let mut alloc = SlugAllocator::new(
        master
            .iter()
            .enumerate()
            .filter(|(i, _)| !owner.contains_key(i))
            .map(|(_, f)| f.feature_id.clone()),
    );
    let merged: Vec<FeatureSpec> = decisions
        .iter()
        .map(|d| {
            let mut members: Vec<&FeatureSpec> = d
                .member_feature_ids
                .iter()
                .map(|id| &master[position[id.as_str()]])
                .collect();
            members.sort_by_key(|m| position[m.feature_id.as_str()]);
            let anchor = members[0];
            let mut provenance: Vec<Provenance> = members.iter().flat_map(|m| m.provenance.iter().cloned()).collect();
            provenance.extend(members.iter().map(|m| Provenance::Feature(m.feature_id.clone())));
            let mut abandoned_ideas = Vec::new();
            for idea in members.iter().flat_map(|m| m.abandoned_ideas.iter()) {
                if !abandoned_ideas.contains(idea) {
                    abandoned_ideas.push(idea.clone());
                }
            }
            FeatureSpec {
                feature_id: alloc.allocate(&d.merged_name),
                feature_name: d.merged_name.trim().to_string(),
                subgoal: anchor.subgoal.clone(),
                causal_mechanism: anchor.causal_mechanism.clone(),
                definition: join_distinct(members.iter().map(|m| m.definition.as_str())),
                computation_logic: join_distinct(members.iter().map(|m| m.computation_logic.as_str())),
                abandoned_ideas,
                provenance,
                condition: anchor.condition,
            }
        })
        .collect();

    let mut out = Vec::with_capacity(master.len());
    for (i, f) in master.iter().enumerate() {
        match owner.get(&i) {
            None => out.push(f.clone()),
            Some(&d_idx) => {
                let first = decisions[d_idx]
                    .member_feature_ids
                    .iter()
                    .map(|id| position[id.as_str()])
                    .min()
                    .expect("at least two members");
                if first == i {
                    out.push(merged[d_idx].clone());
                }
            }
        }
    }
    Ok(out)
}

/// Result of one or more consolidation passes.
#[derive(Debug, Clone)]
pub struct Consolidation {
    pub features: Vec<FeatureSpec>,
    pub decisions: Vec<MergeDecision>,
    pub transcripts: Vec<AgentTranscript>,
}

fn consolidate_pass(
    master: &[FeatureSpec],
    backend: &Backend,
    batch_size: usize,
    parallelism: usize,
    pass: usize,
) -> Result<Consolidation> {
    if master.is_empty() {
        return Err(Error::EmptyFeatureSet);
    }
    let batches: Vec<(usize, Vec<usize>)> = pre_cluster(master, batch_size).into_iter().enumerate().collect();
    let results = run_parallel(&batches, parallelism, |(idx, members)| {
        let payload = ConsolidationPayload {
            features: members
                .iter()
                .map(|&i| MergeCandidate {
                    feature_id: master[i].feature_id.clone(),
                    feature_name: master[i].feature_name.clone(),
                    definition: master[i].definition.clone(),
                    causal_mechanism: master[i].causal_mechanism.clone(),
                })
                .collect(),
        };
        let ids: HashSet<&str> = members.iter().map(|&i| master[i].feature_id.as_str()).collect();
        let request = CompletionRequest::new(
            format!("consolidation/p{pass}/c{:04}", idx + 1),
            CONSOLIDATION_PROMPT,
            serde_json::to_string(&payload)?,
            schema::CONSOLIDATION,
        );
        complete_validated(backend, request, |raw| validate_merge_response(raw, &ids))
    });
    let mut decisions = Vec::new();
    let mut transcripts = Vec::new();
    for r in results {
        let (d, t) = r?;
        decisions.extend(d);
        transcripts.extend(t);
    }
    let features = apply_merges(master, &decisions)?;
    Ok(Consolidation {
        features,
        decisions,
        transcripts,
    })
}

/// One Agent 2 pass over the master list.
pub fn consolidate(
    master: &[FeatureSpec],
    backend: &Backend,
    batch_size: usize,
    parallelism: usize,
) -> Result<Consolidation> {
    consolidate_pass(master, backend, batch_size, parallelism, 1)
}

/// Sequential passes; pass N+1 sees pass N's output. Stops early once a
/// pass makes no merges.
pub fn consolidate_passes(
    master: &[FeatureSpec],
    backend: &Backend,
    batch_size: usize,
    parallelism: usize,
    passes: usize,
) -> Result<Consolidation> {
    let mut acc = Consolidation {
        features: master.to_vec(),
        decisions: Vec::new(),
        transcripts: Vec::new(),
    };
    for pass in 1..=passes.max(1) {
        let step = consolidate_pass(&acc.features, backend, batch_size, parallelism, pass)?;
        let merged_any = !step.decisions.is_empty();
        acc.features = step.features;
        acc.decisions.extend(step.decisions);
        acc.transcripts.extend(step.transcripts);
        if !merged_any {
            break;
        }
    }
    Ok(acc)
}
