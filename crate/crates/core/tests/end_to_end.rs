use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use featlab::backend::{
    load_cassette, schema, Backend, MockProvider, PriceTable, ProviderKind, ReplayProvider, Rulebook, ScriptedProvider,
};
use featlab::config::RunConfig;
use featlab::ingest::write_records;
use featlab::pipeline::{artifact, read_json, run_pipeline, RESUME_MARKER};
use featlab::synth::{derive_rulebook, generate_population, scan_token, table_plants, PlantedFeature, PopulationPlan};
use featlab::{Condition, DatasetRole, Error, FeatureSpec, FeatureStats, PopulationCounts};

fn write_populations(dir: &Path, planted: Vec<PlantedFeature>, seed: u64) -> PopulationPlan {
    let counts = PopulationCounts::new(400, 600).unwrap();
    let d = generate_population(&PopulationPlan::new(counts, "d", planted.clone()), seed, DatasetRole::Discovery).unwrap();
    let h = generate_population(&PopulationPlan::new(counts, "h", planted.clone()), seed + 1, DatasetRole::Heldout).unwrap();
    write_records(&dir.join("discovery.jsonl"), d.records()).unwrap();
    write_records(&dir.join("heldout.jsonl"), h.records()).unwrap();
    PopulationPlan::new(counts, "d", planted).resolve().unwrap()
}

fn config(dir: &Path, out: &str) -> RunConfig {
    let mut c = RunConfig::default();
    c.paths.discovery = Some(dir.join("discovery.jsonl"));
    c.paths.heldout = Some(dir.join("heldout.jsonl"));
    c.paths.out_dir = dir.join(out);
    c
}

fn stat<'a>(stats: &'a [FeatureStats], id: &str) -> &'a FeatureStats {
    stats.iter().find(|s| s.feature_id == id).unwrap_or_else(|| panic!("no stats for {id}"))
}

#[test]
fn merged_plants_are_scored_by_token_union() {
    let dir = tempfile::tempdir().unwrap();
    let mut planted = table_plants()[..4].to_vec();
    planted.push(PlantedFeature::new("prior exit founder", "zqexit", 60, 30));
    planted.push(PlantedFeature::new("previous acquisition", "zqacq", 50, 40));
    planted[4].merge_group = Some("exit experience".into());
    planted[5].merge_group = Some("exit experience".into());
    write_populations(dir.path(), planted.clone(), 21);
    let backend = MockProvider::backend(derive_rulebook(&planted).unwrap(), PriceTable::default());
    let out = run_pipeline(&config(dir.path(), "run"), &backend, false).unwrap();

    assert_eq!(out.master.len(), 6);
    let ids: Vec<&str> = out.frozen.features().iter().map(|f| f.feature_id.as_str()).collect();
    assert_eq!(ids.len(), 5);
    assert!(ids.contains(&"exit_experience"));
    assert!(!ids.contains(&"prior_exit_founder"));

    // union oracle: records containing either token
    let heldout = featlab::ingest::load_dataset(&dir.path().join("heldout.jsonl"), DatasetRole::Heldout).unwrap();
    let union: BTreeSet<&str> = heldout
        .records()
        .iter()
        .filter(|r| r.attributes.values().any(|v| {
            let t = v.to_string();
            t.contains("zqexit") || t.contains("zqacq")
        }))
        .map(|r| r.entity_id.as_str())
        .collect();
    let n1 = union.iter().filter(|id| heldout.outcome_of(id) == Some(featlab::Outcome::Success)).count() as u64;
    let s = stat(&out.heldout_stats, "exit_experience");
    assert_eq!((s.n1, s.n0), (n1, union.len() as u64 - n1));

    let merged = out.frozen.features().iter().find(|f| f.feature_id == "exit_experience").unwrap();
    let members: Vec<String> = merged
        .provenance
        .iter()
        .filter_map(|p| match p {
            featlab::model::Provenance::Feature(id) => Some(id.clone()),
            _ => None,
        })
        .collect();
    assert_eq!(members, vec!["prior_exit_founder", "previous_acquisition"]);
}

#[test]
fn replay_substitutes_for_mock() {
    let dir = tempfile::tempdir().unwrap();
    let planted = table_plants()[..5].to_vec();
    write_populations(dir.path(), planted.clone(), 3);
    let mock = MockProvider::backend(derive_rulebook(&planted).unwrap(), PriceTable::default());
    let first = run_pipeline(&config(dir.path(), "a"), &mock, false).unwrap();

    let cassette = load_cassette(&dir.path().join("a").join(artifact::TRANSCRIPTS)).unwrap();
    let replay = Backend::new(Box::new(ReplayProvider::new(cassette)), PriceTable::default());
    assert_eq!(replay.kind(), ProviderKind::Replay);
    let second = run_pipeline(&config(dir.path(), "b"), &replay, false).unwrap();
    assert_eq!(first.heldout_stats, second.heldout_stats);
    assert_eq!(first.summary, second.summary);
    for name in [artifact::SUMMARY, artifact::FROZEN, artifact::HELDOUT_STATS_CSV, artifact::TRANSCRIPTS] {
        assert_eq!(
            fs::read(dir.path().join("a").join(name)).unwrap(),
            fs::read(dir.path().join("b").join(name)).unwrap(),
            "{name}"
        );
    }

    // a cassette from another population misses
    let other = tempfile::tempdir().unwrap();
    write_populations(other.path(), planted, 99);
    let err = run_pipeline(&config(other.path(), "c"), &replay, false).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(matches!(err.root(), Error::ReplayMiss { .. }));
}

#[test]
fn failed_run_leaves_marker_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let planted = table_plants()[..5].to_vec();
    write_populations(dir.path(), planted.clone(), 8);
    let book = derive_rulebook(&planted).unwrap();

    // scoring fails twice (bad reply + bad retry); discovery and consolidation go through the rulebook
    let scripted = Arc::new(ScriptedProvider::with_fallback(Box::new(MockProvider::new(book.clone()))));
    scripted.push(schema::SCORING, "not json");
    scripted.push(schema::SCORING, "still not json");
    let failing = Backend::new(Box::new(scripted.clone()), PriceTable::default());
    let cfg = config(dir.path(), "run");
    let err = run_pipeline(&cfg, &failing, false).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "score", .. }));
    assert_eq!(err.exit_code(), 4);
    let marker: serde_json::Value = read_json(&cfg.paths.out_dir.join(RESUME_MARKER)).unwrap();
    assert_eq!(marker["completed"], serde_json::json!(["discover", "consolidate", "freeze"]));
    assert_eq!(marker["failed_stage"], "score");
    assert!(cfg.paths.out_dir.join(artifact::FROZEN).exists());

    // resuming must not call discovery or consolidation again
    let fresh = Arc::new(ScriptedProvider::with_fallback(Box::new(MockProvider::new(book))));
    let backend = Backend::new(Box::new(fresh.clone()), PriceTable::default());
    let out = run_pipeline(&cfg, &backend, true).unwrap();
    assert!(fresh.requests().iter().all(|r| r.schema_id == schema::SCORING));
    assert!(!cfg.paths.out_dir.join(RESUME_MARKER).exists());
    assert_eq!(out.master.len(), 5);
    assert_eq!(out.ledger.discovery.calls, 20);
}

#[test]
fn vanilla_condition_is_recorded_and_subgoals_unconstrained() {
    let dir = tempfile::tempdir().unwrap();
    let mut planted = table_plants()[..5].to_vec();
    for (i, p) in planted.iter_mut().enumerate() {
        p.subgoal = format!("free-form theme {i}");
    }
    write_populations(dir.path(), planted.clone(), 4);
    let backend = MockProvider::backend(derive_rulebook(&planted).unwrap(), PriceTable::default());

    let mut vanilla = config(dir.path(), "v");
    vanilla.condition = Condition::Vanilla;
    let out = run_pipeline(&vanilla, &backend, false).unwrap();
    let master: Vec<FeatureSpec> = read_json(&vanilla.paths.out_dir.join(artifact::MASTER_LIST)).unwrap();
    assert!(master.iter().all(|f| f.condition == Condition::Vanilla));
    assert_eq!(out.summary.label, "vanilla");

    // the same off-list subgoals break a cognitive run
    let err = run_pipeline(&config(dir.path(), "c"), &backend, false).unwrap_err();
    assert_eq!(err.code(), "SUBGOAL_VIOLATION");
    assert!(dir.path().join("c").join(RESUME_MARKER).exists());
}

#[test]
fn overlapping_datasets_are_leakage() {
    let dir = tempfile::tempdir().unwrap();
    let planted = table_plants()[..5].to_vec();
    write_populations(dir.path(), planted.clone(), 12);
    // held-out file reuses discovery ids: the pair is rejected before any call
    fs::copy(dir.path().join("discovery.jsonl"), dir.path().join("heldout.jsonl")).unwrap();
    let backend = MockProvider::backend(derive_rulebook(&planted).unwrap(), PriceTable::default());
    let err = run_pipeline(&config(dir.path(), "run"), &backend, false).unwrap_err();
    assert!(matches!(err, Error::LeakageDetected(1000)));
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn every_plant_matches_generation_counts() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_populations(dir.path(), table_plants(), 30);
    let heldout = featlab::ingest::load_dataset(&dir.path().join("heldout.jsonl"), DatasetRole::Heldout).unwrap();
    for p in &plan.planted {
        assert_eq!(scan_token(&heldout, &p.trigger_token), (p.target_n1, p.target_n0));
    }
    let backend = MockProvider::backend(Rulebook::default(), PriceTable::default());
    // no rules: nothing discovered, consolidation has nothing to freeze
    let err = run_pipeline(&config(dir.path(), "empty"), &backend, false).unwrap_err();
    assert_eq!(err.code(), "EMPTY_FEATURE_SET");
}
