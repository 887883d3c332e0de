//! Stage runners and the end-to-end pipeline with on-disk artifacts.
//!
//! Every stage writes its outputs under the run's output directory, so a
//! single stage can be rerun from the artifacts of the previous one. A
//! failed pipeline leaves `RESUME.json` naming the completed stages; with
//! `resume` set the next run reloads those instead of recomputing them.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agents::{build_discovery_batches, consolidate_passes, discover_all, score_features, Consolidation};
use crate::backend::{load_cassette, save_cassette, AgentTranscript, Backend, CostLedger, Stage};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_heldout, freeze, AuditReport, FrozenFeatureSet};
use crate::ingest::{load_dataset, ExperimentSplit};
use crate::metrics::{compute_stats, summarize, write_stats_csv, RunSummary};
use crate::model::{AssignmentMatrix, Dataset, DatasetRole, FeatureSpec, FeatureStats};
use crate::report::{ranked, render_delta_table, render_extended_table};

pub const RESUME_MARKER: &str = "RESUME.json";

pub mod artifact {
    pub const MASTER_LIST: &str = "master_list.json";
    pub const CONSOLIDATED: &str = "consolidated.json";
    pub const MERGE_DECISIONS: &str = "merge_decisions.json";
    pub const FROZEN: &str = "frozen.json";
    pub const DISCOVERY_ASSIGNMENTS: &str = "discovery_assignments.json";
    pub const DISCOVERY_STATS: &str = "discovery_stats.json";
    pub const DISCOVERY_STATS_CSV: &str = "discovery_stats.csv";
    pub const HELDOUT_ASSIGNMENTS: &str = "heldout_assignments.json";
    pub const HELDOUT_STATS: &str = "heldout_stats.json";
    pub const HELDOUT_STATS_CSV: &str = "heldout_stats.csv";
    pub const AUDIT: &str = "audit.json";
    pub const TRANSCRIPTS_DISCOVERY: &str = "transcripts_discovery.json";
    pub const TRANSCRIPTS_CONSOLIDATION: &str = "transcripts_consolidation.json";
    pub const TRANSCRIPTS_SCORING_DISCOVERY: &str = "transcripts_scoring_discovery.json";
    pub const TRANSCRIPTS_SCORING_HELDOUT: &str = "transcripts_scoring_heldout.json";
    /// All transcripts of the run sorted by request id; a replay cassette.
    pub const TRANSCRIPTS: &str = "transcripts.json";
    pub const LEDGER: &str = "ledger.json";
    pub const SUMMARY: &str = "summary.json";
    pub const REPORT: &str = "report.txt";
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn write_csv(path: &Path, stats: &[FeatureStats]) -> Result<()> {
    let mut buf = Vec::new();
    write_stats_csv(&mut buf, stats)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn dataset_path(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::InvalidArgument(format!("no {what} dataset path configured")))
}

/// Agent 1 over the label-redacted discovery set.
pub fn run_discovery(
    config: &RunConfig,
    backend: &Backend,
    dataset: &Dataset,
) -> Result<(Vec<FeatureSpec>, Vec<AgentTranscript>)> {
    if dataset.role() != DatasetRole::Discovery {
        return Err(Error::WrongRole {
            expected: DatasetRole::Discovery.to_string(),
            actual: dataset.role().to_string(),
        });
    }
    let prompt = config.prompt()?;
    let batches = build_discovery_batches(&dataset.redact_labels(), config.discovery_batch_size);
    discover_all(&batches, &prompt, backend, config.parallelism)
}

pub fn run_consolidation(config: &RunConfig, backend: &Backend, master: &[FeatureSpec]) -> Result<Consolidation> {
    consolidate_passes(
        master,
        backend,
        config.consolidation_batch_size,
        config.parallelism,
        config.consolidation_passes,
    )
}

/// Agent 3 plus statistics on any labeled dataset.
pub fn run_scoring(
    config: &RunConfig,
    backend: &Backend,
    features: &[FeatureSpec],
    dataset: &Dataset,
) -> Result<(AssignmentMatrix, Vec<FeatureStats>, Vec<AgentTranscript>)> {
    let o = config.scoring_options();
    let scoring = score_features(features, dataset, backend, o.feature_batch, o.entity_batch, o.parallelism)?;
    let stats = compute_stats(features, &scoring.matrix, dataset)?;
    Ok((scoring.matrix, stats, scoring.transcripts))
}

/// Headline numbers over the held-out stats: support filter, top-k, mean
/// and median delta-SR, frozen feature count and total run cost.
pub fn summarize_run(
    config: &RunConfig,
    frozen: &FrozenFeatureSet,
    heldout_stats: &[FeatureStats],
    ledger: &CostLedger,
) -> Result<RunSummary> {
    let top = ranked(heldout_stats, config.min_support_count, config.top_k);
    let (mean, median) = summarize(&top)?;
    Ok(RunSummary {
        label: config.condition.to_string(),
        mean_delta_sr: mean,
        median_delta_sr: median,
        feature_count: frozen.len() as u64,
        cost: ledger.total().cost,
        top_k: config.top_k,
        min_support_count: config.min_support_count,
        population: DatasetRole::Heldout.to_string(),
        freeze_checksum: frozen.checksum().to_string(),
    })
}

/// Everything a finished pipeline produced.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub master: Vec<FeatureSpec>,
    pub frozen: FrozenFeatureSet,
    pub discovery_stats: Vec<FeatureStats>,
    pub heldout_stats: Vec<FeatureStats>,
    pub audit: AuditReport,
    pub ledger: CostLedger,
    pub summary: RunSummary,
    pub transcripts: Vec<AgentTranscript>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
struct ResumeMarker {
    run_id: String,
    completed: Vec<String>,
    failed_stage: Option<String>,
    error: Option<String>,
}

const STAGES: [&str; 6] = ["discover", "consolidate", "freeze", "score", "evaluate", "metrics"];

struct Runner<'a> {
    config: &'a RunConfig,
    backend: &'a Backend,
    out: PathBuf,
    reuse: Vec<String>,
    marker: ResumeMarker,
}

impl Runner<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn reusable(&self, stage: &str) -> bool {
        self.reuse.iter().any(|s| s == stage)
    }

    fn done(&mut self, stage: &str) {
        self.marker.completed.push(stage.to_string());
    }

    fn stage<T>(&mut self, stage: &'static str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        info!("stage {stage}");
        match f(self) {
            Ok(v) => {
                self.done(stage);
                Ok(v)
            }
            Err(e) => {
                let e = e.in_stage(stage);
                self.marker.failed_stage = Some(stage.to_string());
                self.marker.error = Some(e.to_string());
                // best effort: the stage error is what the caller needs
                let _ = write_json(&self.path(RESUME_MARKER), &self.marker);
                Err(e)
            }
        }
    }
}

/// discover -> consolidate -> freeze -> score discovery set -> evaluate on
/// held-out -> metrics, with every artifact written to the output directory.
pub fn run_pipeline(config: &RunConfig, backend: &Backend, resume: bool) -> Result<PipelineOutput> {
    config.validate()?;
    let out = config.paths.out_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let run_id = config.run_id();

    let discovery = load_dataset(&dataset_path(&config.paths.discovery, "discovery")?, DatasetRole::Discovery)?;
    let heldout = load_dataset(&dataset_path(&config.paths.heldout, "held-out")?, DatasetRole::Heldout)?;
    let split = ExperimentSplit::from_parts(discovery, heldout, config.seed)?;

    let marker_path = out.join(RESUME_MARKER);
    let reuse = if resume && marker_path.exists() {
        let previous: ResumeMarker = read_json(&marker_path)?;
        if previous.run_id != run_id {
            return Err(Error::InvalidArgument(format!(
                "resume marker belongs to run `{}`, not `{run_id}`",
                previous.run_id
            )));
        }
        previous.completed
    } else {
        Vec::new()
    };
    let mut r = Runner {
        config,
        backend,
        out,
        reuse,
        marker: ResumeMarker {
            run_id: run_id.clone(),
            ..Default::default()
        },
    };

    let (master, t_discovery) = r.stage(STAGES[0], |r| {
        if r.reusable(STAGES[0]) {
            return Ok((
                read_json(&r.path(artifact::MASTER_LIST))?,
                load_cassette(&r.path(artifact::TRANSCRIPTS_DISCOVERY))?,
            ));
        }
        let (master, ts) = run_discovery(r.config, r.backend, &split.discovery)?;
        write_json(&r.path(artifact::MASTER_LIST), &master)?;
        save_cassette(&r.path(artifact::TRANSCRIPTS_DISCOVERY), &ts)?;
        Ok((master, ts))
    })?;

    let (consolidated, t_consolidation) = r.stage(STAGES[1], |r| {
        if r.reusable(STAGES[1]) {
            return Ok((
                read_json::<Vec<FeatureSpec>>(&r.path(artifact::CONSOLIDATED))?,
                load_cassette(&r.path(artifact::TRANSCRIPTS_CONSOLIDATION))?,
            ));
        }
        let c = run_consolidation(r.config, r.backend, &master)?;
        write_json(&r.path(artifact::CONSOLIDATED), &c.features)?;
        write_json(&r.path(artifact::MERGE_DECISIONS), &c.decisions)?;
        save_cassette(&r.path(artifact::TRANSCRIPTS_CONSOLIDATION), &c.transcripts)?;
        Ok((c.features, c.transcripts))
    })?;

    let frozen = r.stage(STAGES[2], |r| {
        if r.reusable(STAGES[2]) {
            return FrozenFeatureSet::load(&r.path(artifact::FROZEN));
        }
        let frozen = freeze(&consolidated, &run_id)?;
        frozen.save(&r.path(artifact::FROZEN))?;
        Ok(frozen)
    })?;

    let (discovery_stats, t_scoring_discovery) = r.stage(STAGES[3], |r| {
        if r.reusable(STAGES[3]) {
            return Ok((
                read_json(&r.path(artifact::DISCOVERY_STATS))?,
                load_cassette(&r.path(artifact::TRANSCRIPTS_SCORING_DISCOVERY))?,
            ));
        }
        let (matrix, stats, ts) = run_scoring(r.config, r.backend, frozen.features(), &split.discovery)?;
        write_json(&r.path(artifact::DISCOVERY_ASSIGNMENTS), &matrix)?;
        write_json(&r.path(artifact::DISCOVERY_STATS), &stats)?;
        write_csv(&r.path(artifact::DISCOVERY_STATS_CSV), &stats)?;
        save_cassette(&r.path(artifact::TRANSCRIPTS_SCORING_DISCOVERY), &ts)?;
        Ok((stats, ts))
    })?;

    let upstream: Vec<AgentTranscript> = t_discovery.iter().chain(&t_consolidation).cloned().collect();
    let (heldout_stats, audit, t_scoring_heldout) = r.stage(STAGES[4], |r| {
        if r.reusable(STAGES[4]) {
            return Ok((
                read_json(&r.path(artifact::HELDOUT_STATS))?,
                read_json(&r.path(artifact::AUDIT))?,
                load_cassette(&r.path(artifact::TRANSCRIPTS_SCORING_HELDOUT))?,
            ));
        }
        let eval = evaluate_heldout(&frozen, &split.heldout, r.backend, &upstream, r.config.scoring_options());
        let eval = match eval {
            Err(e @ Error::LeakageDetected(_)) => {
                let audit = crate::evaluation::audit_leakage(&upstream, &split.heldout);
                write_json(&r.path(artifact::AUDIT), &audit)?;
                return Err(e);
            }
            other => other?,
        };
        write_json(&r.path(artifact::AUDIT), &eval.audit)?;
        write_json(&r.path(artifact::HELDOUT_ASSIGNMENTS), &eval.matrix)?;
        write_json(&r.path(artifact::HELDOUT_STATS), &eval.stats)?;
        write_csv(&r.path(artifact::HELDOUT_STATS_CSV), &eval.stats)?;
        save_cassette(&r.path(artifact::TRANSCRIPTS_SCORING_HELDOUT), &eval.transcripts)?;
        Ok((eval.stats, eval.audit, eval.transcripts))
    })?;

    let (ledger, summary, transcripts) = r.stage(STAGES[5], |r| {
        let mut ledger = CostLedger::new();
        ledger.record_all(&t_discovery, Stage::Discovery);
        ledger.record_all(&t_consolidation, Stage::Consolidation);
        ledger.record_all(t_scoring_discovery.iter().chain(&t_scoring_heldout), Stage::Scoring);
        let summary = summarize_run(r.config, &frozen, &heldout_stats, &ledger)?;

        let mut all: Vec<AgentTranscript> = t_discovery
            .iter()
            .chain(&t_consolidation)
            .chain(&t_scoring_discovery)
            .chain(&t_scoring_heldout)
            .cloned()
            .collect();
        all.sort_by(|a, b| a.request.request_id.cmp(&b.request.request_id));
        save_cassette(&r.path(artifact::TRANSCRIPTS), &all)?;
        write_json(&r.path(artifact::LEDGER), &ledger)?;
        write_json(&r.path(artifact::SUMMARY), &summary)?;

        let top = ranked(&heldout_stats, r.config.min_support_count, r.config.top_k);
        let text = format!(
            "run {run_id} ({} condition), held-out top {}\n\n{}\n{}",
            r.config.condition,
            r.config.top_k,
            render_delta_table(&top),
            render_extended_table(&top)
        );
        fs::write(r.path(artifact::REPORT), text).map_err(|e| Error::io(r.path(artifact::REPORT), e))?;
        Ok((ledger, summary, all))
    })?;

    if marker_path.exists() {
        fs::remove_file(&marker_path).map_err(|e| Error::io(&marker_path, e))?;
    }
    Ok(PipelineOutput {
        master,
        frozen,
        discovery_stats,
        heldout_stats,
        audit,
        ledger,
        summary,
        transcripts,
    })
}
